#pragma once

// Token-level superposition metrics over one layer's hidden representations:
// interference (pairwise dot products), polysemanticity (how much of the other
// tokens a row's direction picks up) and capacity (share of a row's direction
// dedicated to its own token). All metrics run in double precision.

#include "safr/common.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace safr {

/// Rows below this l2 norm are treated as zero vectors.
inline constexpr double kNormEpsilon = 1e-8;

struct RepresentationMatrix {
    LayerTag layer = LayerTag::embedding;
    MatrixD rows;              // T x D; rows at index >= valid_len are padding
    std::size_t valid_len = 0;

    RepresentationMatrix() = default;
    RepresentationMatrix(LayerTag tag, MatrixD m) : layer(tag), rows(std::move(m)), valid_len(static_cast<std::size_t>(rows.rows())) {}
    RepresentationMatrix(LayerTag tag, MatrixD m, std::size_t valid) : layer(tag), rows(std::move(m)), valid_len(valid) {}

    /// Builds from ragged input, rejecting rows of unequal dimension.
    static RepresentationMatrix from_rows(const std::vector<std::vector<double>>& data, LayerTag tag = LayerTag::embedding) {
        if (data.empty()) throw InvalidInput("representation matrix needs at least one row");
        const auto dim = data.front().size();
        if (dim == 0) throw InvalidInput("representation rows must have dimension >= 1");
        MatrixD m(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data[i].size() != dim) {
                throw InvalidInput("row " + std::to_string(i) + " has dimension " + std::to_string(data[i].size()) +
                                   ", expected " + std::to_string(dim));
            }
            for (std::size_t d = 0; d < dim; ++d) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = data[i][d];
        }
        return {tag, std::move(m)};
    }

    [[nodiscard]] auto valid_rows() const { return rows.topRows(static_cast<Eigen::Index>(valid_len)); }
    [[nodiscard]] Eigen::Index dim() const { return rows.cols(); }
};

struct MetricsReport {
    MatrixD interference;   // I, T x T
    VectorD polysemanticity; // P
    VectorD capacity;       // C_i
    double capacity_sum = 0.0;
};

namespace detail {

inline void check_metric_input(const RepresentationMatrix& h) {
    if (h.valid_len < 1) throw InvalidInput("representation matrix has no valid rows");
    if (h.valid_len > static_cast<std::size_t>(h.rows.rows())) throw InvalidInput("valid_len exceeds row count");
    if (h.rows.cols() < 1) throw InvalidInput("representation rows must have dimension >= 1");
}

/// Gram matrix of the valid rows. Each unordered pair is evaluated once and mirrored,
/// so the result is symmetric bit-for-bit.
inline MatrixD gram(const RepresentationMatrix& h) {
    check_metric_input(h);
    const auto t = static_cast<Eigen::Index>(h.valid_len);
    MatrixD g(t, t);
    for (Eigen::Index i = 0; i < t; ++i) {
        for (Eigen::Index j = i; j < t; ++j) {
            const double v = h.rows.row(i).dot(h.rows.row(j));
            g(i, j) = v;
            g(j, i) = v;
        }
    }
    return g;
}

inline VectorD row_norms(const MatrixD& g) { return g.diagonal().cwiseMax(0.0).cwiseSqrt(); }

inline VectorD polysemanticity_from_gram(const MatrixD& g) {
    const auto t = g.rows();
    const VectorD norms = row_norms(g);
    VectorD out = VectorD::Zero(t);
    for (Eigen::Index i = 0; i < t; ++i) {
        if (norms(i) < kNormEpsilon) continue;
        double acc = 0.0;
        for (Eigen::Index j = 0; j < t; ++j) {
            if (j == i) continue;
            const double proj = g(i, j) / norms(i);
            acc += proj * proj;
        }
        out(i) = acc;
    }
    return out;
}

inline VectorD capacity_from_gram(const MatrixD& g) {
    const auto t = g.rows();
    const VectorD norms = row_norms(g);
    VectorD out = VectorD::Zero(t);
    for (Eigen::Index i = 0; i < t; ++i) {
        if (norms(i) < kNormEpsilon) continue;
        double denom = 0.0;
        for (Eigen::Index j = 0; j < t; ++j) denom += g(i, j) * g(i, j);
        out(i) = g(i, i) * g(i, i) / denom;
    }
    return out;
}

} // namespace detail

/// I[i][j] = h_i . h_j over the valid rows.
[[nodiscard]] inline MatrixD interference_matrix(const RepresentationMatrix& h) { return detail::gram(h); }

/// P_i = sum_{j != i} (h_i/|h_i| . h_j)^2; zero rows score 0.
[[nodiscard]] inline VectorD polysemanticity(const RepresentationMatrix& h) {
    return detail::polysemanticity_from_gram(detail::gram(h));
}

/// C_i = (h_i . h_i)^2 / sum_j (h_i . h_j)^2 with j = i included; zero rows score 0.
[[nodiscard]] inline VectorD capacity(const RepresentationMatrix& h) {
    return detail::capacity_from_gram(detail::gram(h));
}

/// Normalized interference in [-1, 1]; zero rows give 0 everywhere, including the diagonal.
[[nodiscard]] inline MatrixD cosine_matrix(const RepresentationMatrix& h) {
    const MatrixD g = detail::gram(h);
    const VectorD norms = detail::row_norms(g);
    const auto t = g.rows();
    MatrixD out = MatrixD::Zero(t, t);
    for (Eigen::Index i = 0; i < t; ++i) {
        if (norms(i) < kNormEpsilon) continue;
        out(i, i) = 1.0;
        for (Eigen::Index j = i + 1; j < t; ++j) {
            if (norms(j) < kNormEpsilon) continue;
            const double c = std::clamp(g(i, j) / (norms(i) * norms(j)), -1.0, 1.0);
            out(i, j) = c;
            out(j, i) = c;
        }
    }
    return out;
}

[[nodiscard]] inline MetricsReport compute_metrics(const RepresentationMatrix& h) {
    MetricsReport r;
    r.interference = detail::gram(h);
    r.polysemanticity = detail::polysemanticity_from_gram(r.interference);
    r.capacity = detail::capacity_from_gram(r.interference);
    r.capacity_sum = r.capacity.sum();
    return r;
}

} // namespace safr
