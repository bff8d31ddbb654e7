#include "safr/dataset_io.hpp"

#include "support/helpers.hpp"
#include "support/toy_corpus.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace safr;

namespace {

std::vector<RawExample> parse(const std::string& text, int classes = 2) {
    std::istringstream in(text);
    return parse_tsv(in, classes, "mem");
}

std::string parse_error(const std::string& text, int classes = 2) {
    try {
        (void)parse(text, classes);
    } catch (const ParseError& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST(Tsv, ParsesLabelAndText) {
    const auto ex = parse("1\tgreat film\n");
    ASSERT_EQ(ex.size(), 1u);
    EXPECT_EQ(ex[0].label, 1);
    EXPECT_EQ(ex[0].text, "great film");
}

TEST(Tsv, SkipsBlankLinesAndKeepsOrder) {
    const auto ex = parse("0\ta\n\n1\tb\r\n");
    ASSERT_EQ(ex.size(), 2u);
    EXPECT_EQ(ex[1].text, "b");
}

TEST(Tsv, ErrorsNameTheLine) {
    EXPECT_EQ(parse_error(""), "mem: no examples");
    EXPECT_EQ(parse_error("1\tok\n2\tok\n"), "mem:2: label out of range");
    EXPECT_EQ(parse_error("1 no tab\n"), "mem:1: missing tab separator");
    EXPECT_EQ(parse_error("x\ttext\n"), "mem:1: label is not an integer");
    EXPECT_EQ(parse_error("1\t   \n"), "mem:1: empty text");
    EXPECT_THROW(load_tsv("/nonexistent/file.tsv"), ParseError);
}

TEST(Tokenize, SplitsPunctuation) {
    EXPECT_EQ(tokenize("Preposterous and tedious,"), (std::vector<std::string>{"preposterous", "and", "tedious", ","}));
    EXPECT_EQ(tokenize("A"), (std::vector<std::string>{"a"}));
    EXPECT_TRUE(tokenize("  ").empty());
    EXPECT_EQ(tokenize("(\"Wow!\")"), (std::vector<std::string>{"(", "\"", "wow", "!", "\"", ")"}));
    EXPECT_EQ(tokenize("don't"), (std::vector<std::string>{"don't"}));
}

TEST(Vocab, MinFreqAndOrdering) {
    const auto v = build_vocab({{0, "a a b"}}, 2);
    EXPECT_TRUE(v.contains("a"));
    EXPECT_FALSE(v.contains("b"));
    EXPECT_EQ(v.id("b"), Vocab::kUnk);

    const auto single = build_vocab({{0, "x"}}, 1);
    EXPECT_EQ(single.tokens(), (std::vector<std::string>{"<pad>", "<unk>", "x"}));

    const auto tied = build_vocab({{0, "zeta alpha zeta alpha zeta alpha common common common common"}}, 1);
    EXPECT_EQ(tied.token(2), "common");
    EXPECT_LT(tied.id("alpha"), tied.id("zeta"));
}

TEST(Encode, TruncatesAndMapsUnknown) {
    const auto v = build_vocab({{0, "great film"}}, 1);
    auto e = encode({1, "great film"}, v, 64);
    EXPECT_EQ(e.length(), 2u);
    EXPECT_EQ(encode({1, "great unseen"}, v, 64).token_ids[1], Vocab::kUnk);

    std::string long_text;
    for (int i = 0; i < 300; ++i) long_text += "w" + std::to_string(i) + " ";
    const auto big = encode({0, long_text}, v, 256);
    EXPECT_EQ(big.length(), 256u);
    EXPECT_EQ(big.tokens.front(), "w0");
    EXPECT_EQ(big.tokens.back(), "w255");

    TokenizedExample out;
    EXPECT_FALSE(encode({0, "   "}, v, 64, out));
    EXPECT_THROW((void)encode({0, ""}, v, 64), InvalidInput);
}

TEST(Encode, RoundTripsThroughVocab) {
    const auto ds = safr::testing::toy_dataset();
    for (const auto* split : {&ds.train, &ds.dev, &ds.test}) {
        for (const auto& ex : split->examples) {
            ASSERT_EQ(ex.tokens.size(), ex.token_ids.size());
            for (std::size_t i = 0; i < ex.length(); ++i) {
                if (ds.vocab.contains(ex.tokens[i])) {
                    EXPECT_EQ(ds.vocab.token(ex.token_ids[i]), ex.tokens[i]);
                } else {
                    EXPECT_EQ(ex.token_ids[i], Vocab::kUnk);
                }
            }
        }
    }
}

TEST(Ingest, ReportsRejectedAndTruncated) {
    IngestReport reports[3];
    IngestOptions opt;
    opt.min_freq = 1;
    opt.max_len = 3;
    const auto ds = ingest({{0, "a b c d"}, {1, "..."}, {1, "b"}}, {{0, "a"}}, {{1, "c"}}, opt, &reports);
    EXPECT_EQ(reports[0].accepted, 3u);   // "..." tokenizes to three punctuation tokens
    EXPECT_EQ(reports[0].truncated, 1u);
    const auto ds2 = ingest({{0, "a b c d"}, {1, "b"}}, {{0, "a"}}, {{1, "c"}}, opt, &reports);
    EXPECT_EQ(ds2.train.size(), 2u);
    EXPECT_EQ(ds2.train.examples[0].length(), 3u);
}

TEST(Ingest, HoldoutDevWhenMissing) {
    const auto raw = safr::testing::toy_examples(100, 3);
    IngestOptions opt;
    opt.min_freq = 1;
    opt.seed = 5;
    const auto ds = ingest(raw, {}, safr::testing::toy_examples(10, 4), opt);
    EXPECT_EQ(ds.train.size(), 80u);
    EXPECT_EQ(ds.dev.size(), 20u);
    const auto again = ingest(raw, {}, safr::testing::toy_examples(10, 4), opt);
    EXPECT_EQ(ds, again);
    opt.seed = 6;
    EXPECT_FALSE(ingest(raw, {}, safr::testing::toy_examples(10, 4), opt).dev == ds.dev);
}

TEST(Batches, SizesPaddingAndDeterminism) {
    IngestOptions opt;
    opt.min_freq = 1;
    const auto ds = ingest({{0, "a b c"}, {1, "a b c d e"}, {0, "a"}, {1, "b c"}, {0, "d e"}}, {{0, "a"}}, {{0, "a"}}, opt);
    const auto batches = make_batches(ds.train, 2, 9);
    ASSERT_EQ(batches.size(), 3u);
    EXPECT_EQ(batches[0].size(), 2u);
    EXPECT_EQ(batches[2].size(), 1u);
    for (const auto& b : batches) {
        for (std::size_t r = 0; r < b.size(); ++r) {
            const auto& ex = ds.train.examples[b.indices[r]];
            EXPECT_EQ(b.lengths[r], ex.length());
            for (Eigen::Index t = 0; t < b.token_ids.cols(); ++t) {
                const auto expect = static_cast<std::size_t>(t) < ex.length() ? static_cast<std::int32_t>(ex.token_ids[static_cast<std::size_t>(t)])
                                                                               : static_cast<std::int32_t>(Vocab::kPad);
                EXPECT_EQ(b.token_ids(static_cast<Eigen::Index>(r), t), expect);
            }
        }
    }
    const auto again = make_batches(ds.train, 2, 9);
    for (std::size_t i = 0; i < batches.size(); ++i) EXPECT_EQ(batches[i].indices, again[i].indices);
    EXPECT_THROW((void)make_batches(DatasetSplit{"x", {}}, 2, 0), InvalidInput);
}

TEST(Batches, MixedLengthsPadToMax) {
    IngestOptions opt;
    opt.min_freq = 1;
    const auto ds = ingest({{0, "a b c"}, {1, "a b c d e"}}, {{0, "a"}}, {{0, "a"}}, opt);
    const auto b = make_batches(ds.train, 2, 0, false).front();
    EXPECT_EQ(b.token_ids.cols(), 5);
    EXPECT_EQ(b.lengths, (std::vector<std::size_t>{3, 5}));
}

TEST(DatasetCache, RoundTripAndHash) {
    const auto ds = safr::testing::toy_dataset();
    std::stringstream buf;
    write_dataset(buf, ds);
    const auto bytes = buf.str();
    EXPECT_EQ(bytes.substr(0, 8), std::string("SAFRDS1\0", 8));
    const auto back = read_dataset(buf);
    EXPECT_EQ(back, ds);
    EXPECT_EQ(dataset_hash(back), dataset_hash(ds));
    EXPECT_EQ(dataset_hash(safr::testing::toy_dataset()), dataset_hash(ds));
}

TEST(DatasetCache, RejectsCorruptInput) {
    std::stringstream bad("NOTMAGIC....");
    EXPECT_THROW((void)read_dataset(bad), ParseError);
    std::stringstream buf;
    write_dataset(buf, safr::testing::toy_dataset());
    auto bytes = buf.str();
    std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
    EXPECT_THROW((void)read_dataset(truncated), ParseError);
}

TEST(DatasetCache, ManifestListsCounts) {
    const auto ds = safr::testing::toy_dataset();
    const auto m = dataset_manifest(ds);
    EXPECT_NE(m.find("train=240\n"), std::string::npos);
    EXPECT_NE(m.find("dev=60\n"), std::string::npos);
    EXPECT_NE(m.find("test=80\n"), std::string::npos);
    EXPECT_NE(m.find("dataset_hash=" + hex64(dataset_hash(ds))), std::string::npos);
}
