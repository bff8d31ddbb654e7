#pragma once

// Variational word mask: a sigmoid keep-probability per token, relaxed with a
// binary-concrete (Gumbel-sigmoid) sample during training and replaced by its
// expectation at evaluation time. The mask gates each embedding row.

#include "safr/common.hpp"
#include "safr/rng.hpp"

#include <algorithm>
#include <cmath>

namespace safr {

enum class Mode { train, eval };

inline constexpr double kMaskProbClamp = 1e-6;

template <class S>
struct MaskState {
    RowVector<S> probs;     // p_i, 0 at padding
    RowVector<S> samples;   // z_i
    RowVector<S> noise;     // Gumbel draws used in train mode (0 in eval)
    S temperature = S(0.5);
    Mode mode = Mode::eval;
};

template <class S>
[[nodiscard]] S sigmoid(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
}

/// p_i = sigmoid(w . e_i + b) for i < valid_len, 0 for padding rows.
template <class S>
[[nodiscard]] RowVector<S> mask_probs(const Matrix<S>& embeddings, const RowVector<S>& w, S b, std::size_t valid_len) {
    if (w.size() != embeddings.cols()) throw InvalidInput("mask weight dimension does not match embedding width");
    RowVector<S> p = RowVector<S>::Zero(embeddings.rows());
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(valid_len); ++i) {
        p(i) = sigmoid<S>(embeddings.row(i).dot(w) + b);
    }
    return p;
}

/// Train: z_i = sigmoid((log p_i - log(1 - p_i) + g_i) / tau), g_i ~ Gumbel(0, 1).
/// Eval: z_i = p_i. Probabilities are clamped to [1e-6, 1 - 1e-6] before the logit.
template <class S>
[[nodiscard]] MaskState<S> sample_mask(const RowVector<S>& probs, S temperature, Mode mode, Rng* rng, std::size_t valid_len) {
    if (!(temperature > S(0))) throw InvalidInput("mask temperature must be > 0");
    MaskState<S> st;
    st.probs = probs;
    st.temperature = temperature;
    st.mode = mode;
    st.noise = RowVector<S>::Zero(probs.size());
    if (mode == Mode::eval) {
        st.samples = probs;
        return st;
    }
    if (rng == nullptr) throw InvalidInput("train-mode mask sampling needs an rng");
    st.samples = RowVector<S>::Zero(probs.size());
    const S lo = S(kMaskProbClamp);
    const S hi = S(1) - S(kMaskProbClamp);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(valid_len); ++i) {
        const S pc = std::clamp(probs(i), lo, hi);
        const S g = static_cast<S>(rng->gumbel());
        st.noise(i) = g;
        st.samples(i) = sigmoid<S>((std::log(pc) - std::log(S(1) - pc) + g) / temperature);
    }
    return st;
}

/// Row i of the output is z_i * e_i.
template <class S>
[[nodiscard]] Matrix<S> apply_mask(const Matrix<S>& embeddings, const RowVector<S>& z) {
    if (z.size() != embeddings.rows()) throw InvalidInput("mask length does not match token count");
    return z.transpose().asDiagonal() * embeddings;
}

/// dL/dp given dL/dz through the sampling step.
template <class S>
[[nodiscard]] RowVector<S> sample_mask_backward(const MaskState<S>& st, const RowVector<S>& dz, std::size_t valid_len) {
    RowVector<S> dp = RowVector<S>::Zero(dz.size());
    if (st.mode == Mode::eval) {
        dp.head(static_cast<Eigen::Index>(valid_len)) = dz.head(static_cast<Eigen::Index>(valid_len));
        return dp;
    }
    const S lo = S(kMaskProbClamp);
    const S hi = S(1) - S(kMaskProbClamp);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(valid_len); ++i) {
        const S p = st.probs(i);
        if (p < lo || p > hi) continue;   // clamped: flat in p
        const S z = st.samples(i);
        const S dz_dlogit = z * (S(1) - z) / st.temperature;
        dp(i) = dz(i) * dz_dlogit / (p * (S(1) - p));
    }
    return dp;
}

} // namespace safr
