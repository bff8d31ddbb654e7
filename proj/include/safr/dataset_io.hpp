#pragma once

// Encoded dataset container. Layout (little-endian):
//   "SAFRDS1\0"
//   u32 vocab_size, u32 min_freq, u32 max_len, u32 num_classes, u32 seed_lo, u32 seed_hi
//   vocab_size x (u32 len, bytes)                        id -> token
//   3 x split (train, dev, test):
//     u32 N, then per example: u32 label, u32 T, T x u32 id, T x (u32 len, bytes)

#include "safr/binary_io.hpp"
#include "safr/data.hpp"

#include <fstream>
#include <sstream>

namespace safr {

inline constexpr char kDatasetMagic[9] = "SAFRDS1";

struct Dataset {
    Vocab vocab;
    DatasetSplit train{"train", {}};
    DatasetSplit dev{"dev", {}};
    DatasetSplit test{"test", {}};
    std::uint32_t max_len = 64;
    std::uint32_t num_classes = 2;
    std::uint64_t seed = 0;

    [[nodiscard]] const DatasetSplit& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "dev") return dev;
        if (name == "test") return test;
        throw InvalidInput("unknown split '" + name + "'");
    }

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline void write_dataset(std::ostream& out, const Dataset& ds) {
    out.write(kDatasetMagic, 8);
    io::write_u32(out, static_cast<std::uint32_t>(ds.vocab.size()));
    io::write_u32(out, ds.vocab.min_freq());
    io::write_u32(out, ds.max_len);
    io::write_u32(out, ds.num_classes);
    io::write_u32(out, static_cast<std::uint32_t>(ds.seed & 0xFFFFFFFFu));
    io::write_u32(out, static_cast<std::uint32_t>(ds.seed >> 32));
    for (const auto& t : ds.vocab.tokens()) io::write_string(out, t);
    for (const auto* split : {&ds.train, &ds.dev, &ds.test}) {
        io::write_u32(out, static_cast<std::uint32_t>(split->size()));
        for (const auto& ex : split->examples) {
            io::write_u32(out, static_cast<std::uint32_t>(ex.label));
            io::write_u32(out, static_cast<std::uint32_t>(ex.length()));
            for (auto id : ex.token_ids) io::write_u32(out, id);
            for (const auto& t : ex.tokens) io::write_string(out, t);
        }
    }
}

[[nodiscard]] inline Dataset read_dataset(std::istream& in) {
    io::expect_magic(in, kDatasetMagic, "dataset cache");
    Dataset ds;
    const auto vocab_size = io::read_u32(in);
    const auto min_freq = io::read_u32(in);
    ds.max_len = io::read_u32(in);
    ds.num_classes = io::read_u32(in);
    const std::uint64_t lo = io::read_u32(in);
    const std::uint64_t hi = io::read_u32(in);
    ds.seed = lo | (hi << 32);
    std::vector<std::string> tokens(vocab_size);
    for (auto& t : tokens) t = io::read_string(in);
    ds.vocab = Vocab::from_id_list(tokens, min_freq);
    for (auto* split : {&ds.train, &ds.dev, &ds.test}) {
        const auto n = io::read_u32(in);
        split->examples.resize(n);
        for (auto& ex : split->examples) {
            const auto label = io::read_u32(in);
            if (label >= ds.num_classes) throw ParseError("dataset cache: label out of range");
            ex.label = static_cast<int>(label);
            const auto t = io::read_u32(in);
            if (t == 0 || t > ds.max_len) throw ParseError("dataset cache: bad example length");
            ex.token_ids.resize(t);
            ex.tokens.resize(t);
            for (auto& id : ex.token_ids) {
                id = io::read_u32(in);
                if (id >= vocab_size) throw ParseError("dataset cache: token id out of range");
            }
            for (auto& s : ex.tokens) s = io::read_string(in);
        }
    }
    return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_dataset(out, ds);
}

[[nodiscard]] inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    return read_dataset(in);
}

/// Hash of the serialized container, recorded in run manifests.
[[nodiscard]] inline std::uint64_t dataset_hash(const Dataset& ds) {
    std::ostringstream buf;
    write_dataset(buf, ds);
    return fnv1a(buf.str());
}

[[nodiscard]] inline std::string dataset_manifest(const Dataset& ds, const IngestReport* reports = nullptr) {
    std::ostringstream m;
    m << "format=SAFRDS1\n";
    m << "vocab_size=" << ds.vocab.size() << "\n";
    m << "min_freq=" << ds.vocab.min_freq() << "\n";
    m << "max_len=" << ds.max_len << "\n";
    m << "num_classes=" << ds.num_classes << "\n";
    m << "seed=" << ds.seed << "\n";
    m << "train=" << ds.train.size() << "\n";
    m << "dev=" << ds.dev.size() << "\n";
    m << "test=" << ds.test.size() << "\n";
    if (reports) {
        const char* names[] = {"train", "dev", "test"};
        for (int i = 0; i < 3; ++i) {
            m << names[i] << "_rejected=" << reports[i].rejected << "\n";
            m << names[i] << "_truncated=" << reports[i].truncated << "\n";
        }
    }
    m << "vocab_hash=" << hex64(ds.vocab.hash()) << "\n";
    m << "dataset_hash=" << hex64(dataset_hash(ds)) << "\n";
    return m.str();
}

struct IngestOptions {
    std::uint32_t min_freq = 2;
    std::uint32_t max_len = 64;
    std::uint32_t num_classes = 2;
    std::uint64_t seed = 0;
    double dev_fraction = 0.2;   // used only when no dev split is supplied
};

/// Builds the vocabulary on train only and encodes all three splits. Without a
/// dev split, a seeded holdout of the train examples becomes dev.
[[nodiscard]] inline Dataset ingest(std::vector<RawExample> train, std::vector<RawExample> dev, const std::vector<RawExample>& test,
                                    const IngestOptions& opt, IngestReport (*reports)[3] = nullptr) {
    if (dev.empty()) {
        auto parts = split_holdout(train, opt.dev_fraction, opt.seed);
        train = std::move(parts.first);
        dev = std::move(parts.second);
    }
    Dataset ds;
    ds.max_len = opt.max_len;
    ds.num_classes = opt.num_classes;
    ds.seed = opt.seed;
    ds.vocab = build_vocab(train, opt.min_freq);
    IngestReport local[3];
    ds.train = encode_split("train", train, ds.vocab, opt.max_len, &local[0]);
    ds.dev = encode_split("dev", dev, ds.vocab, opt.max_len, &local[1]);
    ds.test = encode_split("test", test, ds.vocab, opt.max_len, &local[2]);
    if (ds.train.examples.empty() || ds.dev.examples.empty() || ds.test.examples.empty()) {
        throw InvalidInput("every split needs at least one usable example");
    }
    if (reports) {
        for (int i = 0; i < 3; ++i) (*reports)[i] = local[i];
    }
    return ds;
}

} // namespace safr
