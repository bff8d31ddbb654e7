#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace safr {

template <class S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class S>
using RowVector = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatrixD = Matrix<double>;
using VectorD = Eigen::VectorXd;

/// Bad arguments or shapes handed to a library call.
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed input files (TSV, dataset cache, checkpoint, config).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class LayerTag { embedding, vmask, attention_out, fc1, fc2 };

inline constexpr LayerTag kAllLayers[] = {LayerTag::embedding, LayerTag::vmask, LayerTag::attention_out,
                                          LayerTag::fc1, LayerTag::fc2};

[[nodiscard]] inline std::string_view to_string(LayerTag tag) {
    switch (tag) {
    case LayerTag::embedding: return "embedding";
    case LayerTag::vmask: return "vmask";
    case LayerTag::attention_out: return "attention_out";
    case LayerTag::fc1: return "fc1";
    case LayerTag::fc2: return "fc2";
    }
    return "unknown";
}

[[nodiscard]] inline LayerTag parse_layer_tag(std::string_view name) {
    for (auto tag : kAllLayers) {
        if (to_string(tag) == name) return tag;
    }
    if (name == "attention") return LayerTag::attention_out;
    throw InvalidInput("unknown layer tag '" + std::string(name) + "'");
}

/// 64-bit FNV-1a; stable across platforms, used for vocab and dataset hashes.
[[nodiscard]] inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

[[nodiscard]] inline std::string hex64(std::uint64_t v) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

} // namespace safr
