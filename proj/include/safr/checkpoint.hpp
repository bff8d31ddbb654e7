#pragma once

// Checkpoint container (little-endian):
//   "SAFRCK1\0"
//   u32 header_len, header bytes      key=value lines: model config, seeds, epoch, dev accuracy, vocab hash
//   u32 vocab_size, vocab_size x (u32 len, bytes)
//   u32 tensor_count, then per tensor: u32 name_len, name, u32 ndim, ndim x u32 dim, f32 data (row-major)

#include "safr/binary_io.hpp"
#include "safr/data.hpp"
#include "safr/model.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <type_traits>

namespace safr {

inline constexpr char kCheckpointMagic[9] = "SAFRCK1";

struct Checkpoint {
    ModelConfig config;
    Vocab vocab;
    Parameters<float> params;
    std::uint64_t seed = 0;      // training seed
    std::uint32_t epoch = 0;
    double dev_accuracy = 0.0;
    double lambda_imp = 0.0;
    double lambda_inter = 0.0;

    template <class S = float>
    [[nodiscard]] Model<S> model() const {
        if constexpr (std::is_same_v<S, float>) {
            return Model<float>(config, params);
        } else {
            return Model<S>(config, params.template cast<S>());
        }
    }
};

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string checkpoint_header(const Checkpoint& ck) {
    const auto& c = ck.config;
    std::ostringstream h;
    h << "embed_dim=" << c.embed_dim << "\n";
    h << "ffn_dim=" << c.ffn_dim << "\n";
    h << "heads=" << c.heads << "\n";
    h << "num_classes=" << c.num_classes << "\n";
    h << "vocab_size=" << c.vocab_size << "\n";
    h << "max_len=" << c.max_len << "\n";
    h << "dropout=" << format_double(c.dropout) << "\n";
    h << "model_seed=" << c.seed << "\n";
    h << "use_vmask=" << (c.use_vmask ? 1 : 0) << "\n";
    h << "vmask_temperature=" << format_double(c.vmask_temperature) << "\n";
    h << "positional_encoding=" << (c.positional_encoding ? 1 : 0) << "\n";
    h << "seed=" << ck.seed << "\n";
    h << "epoch=" << ck.epoch << "\n";
    h << "dev_accuracy=" << format_double(ck.dev_accuracy) << "\n";
    h << "lambda_imp=" << format_double(ck.lambda_imp) << "\n";
    h << "lambda_inter=" << format_double(ck.lambda_inter) << "\n";
    h << "vocab_hash=" << hex64(ck.vocab.hash()) << "\n";
    return h.str();
}

inline std::map<std::string, std::string> parse_header(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError("checkpoint header: malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

} // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
    out.write(kCheckpointMagic, 8);
    io::write_string(out, detail::checkpoint_header(ck));
    io::write_u32(out, static_cast<std::uint32_t>(ck.vocab.size()));
    for (const auto& t : ck.vocab.tokens()) io::write_string(out, t);
    std::uint32_t count = 0;
    ck.params.visit([&](const std::string&, const Matrix<float>&) { ++count; });
    io::write_u32(out, count);
    ck.params.visit([&](const std::string& name, const Matrix<float>& m) {
        io::write_string(out, name);
        io::write_u32(out, 2);
        io::write_u32(out, static_cast<std::uint32_t>(m.rows()));
        io::write_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.size(); ++i) io::write_f32(out, m.data()[i]);
    });
}

[[nodiscard]] inline Checkpoint read_checkpoint(std::istream& in) {
    io::expect_magic(in, kCheckpointMagic, "checkpoint");
    const auto kv = detail::parse_header(io::read_string(in));
    auto get = [&](const std::string& key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) throw ParseError("checkpoint header: missing key '" + key + "'");
        return it->second;
    };
    auto get_u = [&](const std::string& key) { return static_cast<std::uint64_t>(std::stoull(get(key))); };
    auto get_d = [&](const std::string& key) { return std::stod(get(key)); };

    Checkpoint ck;
    auto& c = ck.config;
    try {
        c.embed_dim = get_u("embed_dim");
        c.ffn_dim = get_u("ffn_dim");
        c.heads = get_u("heads");
        c.num_classes = get_u("num_classes");
        c.vocab_size = get_u("vocab_size");
        c.max_len = get_u("max_len");
        c.dropout = get_d("dropout");
        c.seed = get_u("model_seed");
        c.use_vmask = get_u("use_vmask") != 0;
        c.vmask_temperature = get_d("vmask_temperature");
        c.positional_encoding = get_u("positional_encoding") != 0;
        ck.seed = get_u("seed");
        ck.epoch = static_cast<std::uint32_t>(get_u("epoch"));
        ck.dev_accuracy = get_d("dev_accuracy");
        ck.lambda_imp = get_d("lambda_imp");
        ck.lambda_inter = get_d("lambda_inter");
    } catch (const std::logic_error& e) {
        throw ParseError(std::string("checkpoint header: bad value (") + e.what() + ")");
    }
    c.validate();

    const auto vocab_size = io::read_u32(in);
    if (vocab_size != c.vocab_size) throw ParseError("checkpoint: vocabulary size disagrees with header");
    std::vector<std::string> tokens(vocab_size);
    for (auto& t : tokens) t = io::read_string(in);
    ck.vocab = Vocab::from_id_list(tokens, 1);
    if (hex64(ck.vocab.hash()) != get("vocab_hash")) throw ParseError("checkpoint: vocabulary hash mismatch");

    ck.params = Parameters<float>::zeros(c);
    std::uint32_t expected = 0;
    ck.params.visit([&](const std::string&, const Matrix<float>&) { ++expected; });
    const auto count = io::read_u32(in);
    if (count != expected) throw ParseError("checkpoint: expected " + std::to_string(expected) + " tensors, found " + std::to_string(count));
    ck.params.visit([&](const std::string& name, Matrix<float>& m) {
        const auto stored = io::read_string(in, 256);
        if (stored != name) throw ParseError("checkpoint: expected tensor '" + name + "', found '" + stored + "'");
        if (io::read_u32(in) != 2) throw ParseError("checkpoint: tensor '" + name + "' must be 2-d");
        const auto rows = io::read_u32(in);
        const auto cols = io::read_u32(in);
        if (rows != m.rows() || cols != m.cols()) {
            throw ParseError("checkpoint: tensor '" + name + "' has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                             ", config requires " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
        }
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = io::read_f32(in);
    });
    return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_checkpoint(out, ck);
}

[[nodiscard]] inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path);
    return read_checkpoint(in);
}

} // namespace safr
