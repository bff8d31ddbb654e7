#pragma once

// Word-level text pipeline: TSV ingestion, tokenization, vocabulary, encoding
// and seeded batching.

#include "safr/common.hpp"
#include "safr/rng.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace safr {

struct RawExample {
    int label = 0;
    std::string text;
};

/// Reads `label<TAB>text` lines. Blank lines are skipped; anything else that is
/// not a well-formed line is a ParseError naming the 1-based line number.
[[nodiscard]] inline std::vector<RawExample> parse_tsv(std::istream& in, int num_classes, const std::string& source = "<stream>") {
    std::vector<RawExample> out;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& what) {
        throw ParseError(source + ":" + std::to_string(lineno) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) fail("missing tab separator");
        std::string_view label_text(line.data(), tab);
        while (!label_text.empty() && label_text.front() == ' ') label_text.remove_prefix(1);
        while (!label_text.empty() && label_text.back() == ' ') label_text.remove_suffix(1);
        int label = 0;
        const auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
        if (ec != std::errc() || ptr != label_text.data() + label_text.size() || label_text.empty()) {
            fail("label is not an integer");
        }
        if (label < 0 || label >= num_classes) fail("label out of range");
        std::string text = line.substr(tab + 1);
        if (text.find_first_not_of(" \t") == std::string::npos) fail("empty text");
        out.push_back({label, std::move(text)});
    }
    if (out.empty()) throw ParseError(source + ": no examples");
    return out;
}

[[nodiscard]] inline std::vector<RawExample> load_tsv(const std::string& path, int num_classes = 2) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    return parse_tsv(in, num_classes, path);
}

/// Lowercases, splits on whitespace, then peels leading and trailing ASCII
/// punctuation off each piece as one-character tokens.
[[nodiscard]] inline std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> out;
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    auto is_punct = [](unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; };
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(static_cast<unsigned char>(text[j]))) ++j;
        if (j == i) break;
        std::string piece(text.substr(i, j - i));
        for (auto& c : piece) {
            const auto uc = static_cast<unsigned char>(c);
            if (uc < 0x80) c = static_cast<char>(std::tolower(uc));
        }
        std::size_t lo = 0;
        std::size_t hi = piece.size();
        while (lo < hi && is_punct(static_cast<unsigned char>(piece[lo]))) ++lo;
        while (hi > lo && is_punct(static_cast<unsigned char>(piece[hi - 1]))) --hi;
        for (std::size_t k = 0; k < lo; ++k) out.emplace_back(1, piece[k]);
        if (hi > lo) out.push_back(piece.substr(lo, hi - lo));
        for (std::size_t k = std::max(hi, lo); k < piece.size(); ++k) out.emplace_back(1, piece[k]);
        i = j;
    }
    return out;
}

class Vocab {
public:
    static constexpr std::uint32_t kPad = 0;
    static constexpr std::uint32_t kUnk = 1;
    static constexpr const char* kPadToken = "<pad>";
    static constexpr const char* kUnkToken = "<unk>";

    Vocab() : Vocab(std::vector<std::string>{}, 1) {}

    /// `tokens` excludes the two specials, which are always ids 0 and 1.
    Vocab(const std::vector<std::string>& tokens, std::uint32_t min_freq) : min_freq_(min_freq) {
        add(kPadToken);
        add(kUnkToken);
        for (const auto& t : tokens) {
            if (index_.count(t)) throw InvalidInput("duplicate vocabulary token '" + t + "'");
            add(t);
        }
    }

    /// Rebuilds from a full id->token list (specials included), e.g. from a cache file.
    static Vocab from_id_list(const std::vector<std::string>& all, std::uint32_t min_freq) {
        if (all.size() < 2 || all[0] != kPadToken || all[1] != kUnkToken) {
            throw ParseError("vocabulary must start with <pad>, <unk>");
        }
        return Vocab(std::vector<std::string>(all.begin() + 2, all.end()), min_freq);
    }

    [[nodiscard]] std::uint32_t id(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? kUnk : it->second;
    }
    [[nodiscard]] bool contains(const std::string& token) const { return index_.count(token) != 0; }
    [[nodiscard]] const std::string& token(std::uint32_t id) const { return tokens_.at(id); }
    [[nodiscard]] std::size_t size() const { return tokens_.size(); }
    [[nodiscard]] std::uint32_t min_freq() const { return min_freq_; }
    [[nodiscard]] const std::vector<std::string>& tokens() const { return tokens_; }

    [[nodiscard]] std::uint64_t hash() const {
        std::uint64_t h = fnv1a("vocab");
        for (const auto& t : tokens_) {
            h = fnv1a(t, h);
            h = fnv1a("\n", h);
        }
        return h;
    }

    friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

private:
    void add(const std::string& t) {
        index_.emplace(t, static_cast<std::uint32_t>(tokens_.size()));
        tokens_.push_back(t);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::uint32_t> index_;
    std::uint32_t min_freq_ = 1;
};

/// Tokens with frequency >= min_freq, ordered by (frequency desc, token asc).
[[nodiscard]] inline Vocab build_vocab(const std::vector<RawExample>& train, std::uint32_t min_freq) {
    if (train.empty()) throw InvalidInput("cannot build a vocabulary from an empty split");
    std::map<std::string, std::size_t> freq;
    for (const auto& ex : train) {
        for (auto& t : tokenize(ex.text)) ++freq[t];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (auto& [tok, n] : freq) {
        if (n >= min_freq && tok != Vocab::kPadToken && tok != Vocab::kUnkToken) kept.emplace_back(tok, n);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> tokens;
    tokens.reserve(kept.size());
    for (auto& [tok, n] : kept) tokens.push_back(tok);
    return Vocab(tokens, min_freq);
}

struct TokenizedExample {
    std::vector<std::uint32_t> token_ids;
    std::vector<std::string> tokens;   // surface forms, kept for deletion and plots
    int label = 0;

    [[nodiscard]] std::size_t length() const { return token_ids.size(); }
    friend bool operator==(const TokenizedExample&, const TokenizedExample&) = default;
};

/// Keeps the first `max_len` tokens. Returns false when the text yields no
/// tokens; callers count those as rejected.
[[nodiscard]] inline bool encode(const RawExample& ex, const Vocab& vocab, std::size_t max_len, TokenizedExample& out) {
    if (max_len == 0) throw InvalidInput("max_len must be >= 1");
    auto toks = tokenize(ex.text);
    if (toks.empty()) return false;
    if (toks.size() > max_len) toks.resize(max_len);
    out.label = ex.label;
    out.token_ids.clear();
    out.token_ids.reserve(toks.size());
    for (const auto& t : toks) out.token_ids.push_back(vocab.id(t));
    out.tokens = std::move(toks);
    return true;
}

[[nodiscard]] inline TokenizedExample encode(const RawExample& ex, const Vocab& vocab, std::size_t max_len) {
    TokenizedExample out;
    if (!encode(ex, vocab, max_len, out)) throw InvalidInput("example has no tokens");
    return out;
}

struct DatasetSplit {
    std::string name;
    std::vector<TokenizedExample> examples;

    [[nodiscard]] std::size_t size() const { return examples.size(); }
    friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

struct IngestReport {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::size_t truncated = 0;
};

[[nodiscard]] inline DatasetSplit encode_split(const std::string& name, const std::vector<RawExample>& raw, const Vocab& vocab,
                                               std::size_t max_len, IngestReport* report = nullptr) {
    DatasetSplit split{name, {}};
    split.examples.reserve(raw.size());
    IngestReport local;
    for (const auto& ex : raw) {
        TokenizedExample enc;
        if (!encode(ex, vocab, max_len, enc)) {
            ++local.rejected;
            continue;
        }
        if (tokenize(ex.text).size() > max_len) ++local.truncated;
        split.examples.push_back(std::move(enc));
        ++local.accepted;
    }
    if (report) *report = local;
    return split;
}

/// Seeded split of `raw` into (first, second) with `second_fraction` of the
/// examples going to the second part; order within each part follows the input.
[[nodiscard]] inline std::pair<std::vector<RawExample>, std::vector<RawExample>>
split_holdout(const std::vector<RawExample>& raw, double second_fraction, std::uint64_t seed) {
    if (!(second_fraction > 0.0 && second_fraction < 1.0)) throw InvalidInput("holdout fraction must be in (0, 1)");
    std::vector<std::size_t> idx(raw.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, "holdout"));
    shuffle(idx.begin(), idx.end(), rng);
    const auto n_second = static_cast<std::size_t>(static_cast<double>(raw.size()) * second_fraction);
    std::vector<bool> in_second(raw.size(), false);
    for (std::size_t i = 0; i < n_second; ++i) in_second[idx[i]] = true;
    std::pair<std::vector<RawExample>, std::vector<RawExample>> out;
    for (std::size_t i = 0; i < raw.size(); ++i) (in_second[i] ? out.second : out.first).push_back(raw[i]);
    return out;
}

struct Batch {
    Matrix<std::int32_t> token_ids;        // B x T_max, right-padded with Vocab::kPad
    std::vector<std::size_t> lengths;      // true length per row
    std::vector<int> labels;
    std::vector<std::size_t> indices;      // positions in the source split

    [[nodiscard]] std::size_t size() const { return lengths.size(); }
};

[[nodiscard]] inline std::vector<Batch> make_batches(const DatasetSplit& split, std::size_t batch_size, std::uint64_t seed,
                                                     bool shuffle_order = true) {
    if (split.examples.empty()) throw InvalidInput("cannot batch an empty split");
    if (batch_size == 0) throw InvalidInput("batch_size must be >= 1");
    std::vector<std::size_t> order(split.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle_order) {
        Rng rng(seed);
        shuffle(order.begin(), order.end(), rng);
    }
    std::vector<Batch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const auto end = std::min(order.size(), start + batch_size);
        Batch b;
        std::size_t t_max = 0;
        for (auto k = start; k < end; ++k) t_max = std::max(t_max, split.examples[order[k]].length());
        b.token_ids = Matrix<std::int32_t>::Constant(static_cast<Eigen::Index>(end - start), static_cast<Eigen::Index>(t_max),
                                                     static_cast<std::int32_t>(Vocab::kPad));
        for (auto k = start; k < end; ++k) {
            const auto& ex = split.examples[order[k]];
            const auto row = static_cast<Eigen::Index>(k - start);
            for (std::size_t t = 0; t < ex.length(); ++t) {
                b.token_ids(row, static_cast<Eigen::Index>(t)) = static_cast<std::int32_t>(ex.token_ids[t]);
            }
            b.lengths.push_back(ex.length());
            b.labels.push_back(ex.label);
            b.indices.push_back(order[k]);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

} // namespace safr
