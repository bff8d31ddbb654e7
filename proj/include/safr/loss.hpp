#pragma once

// Training objective: cross-entropy plus two superposition regularizers.
//   importance:  mean_i sqrt(P_i / E), P = polysemanticity of the masked embeddings
//   interaction: sum_heads (1/T^2) sum_{i,j} A_ij (1 - I_ij), I = A A^T
// Per batch, each example is normalized by its own T; the batch value is the
// mean over examples, and the interaction term is additionally divided by the
// head count.

#include "safr/common.hpp"
#include "safr/model.hpp"
#include "safr/repr_metrics.hpp"

#include <cmath>
#include <span>
#include <vector>

namespace safr {

inline constexpr double kSqrtClamp = 1e-12;

struct LossWeights {
    double lambda_imp = 0.0;
    double lambda_inter = 0.0;
    double vmask_info = 0.0;   // coefficient of the optional mask KL term; off by default
};

struct LossBreakdown {
    double l_ce = 0.0;
    double l_importance = 0.0;
    double l_interaction = 0.0;
    double l_vmask_info = 0.0;
    double lambda_imp = 0.0;
    double lambda_inter = 0.0;
    double vmask_info_coeff = 0.0;
    double total = 0.0;

    void recompute_total() {
        total = l_ce + lambda_imp * l_importance + lambda_inter * l_interaction + vmask_info_coeff * l_vmask_info;
    }
};

/// Cross-entropy of one row of logits against `label`, via log-sum-exp.
/// Writes scale * dCE/dlogits into `grad` when non-null.
[[nodiscard]] inline double cross_entropy_row(const RowVector<double>& logits, int label, RowVector<double>* grad = nullptr,
                                              double scale = 1.0) {
    if (label < 0 || label >= logits.size()) throw InvalidInput("label out of range for logits");
    const double m = logits.maxCoeff();
    const RowVector<double> shifted = logits.array() - m;
    const double lse = std::log(shifted.array().exp().sum());
    if (grad) {
        *grad = (shifted.array() - lse).exp().matrix() * scale;
        (*grad)(label) -= scale;
    }
    return lse - shifted(label);
}

/// -(1/N) sum_n log softmax(logits_n)[y_n].
[[nodiscard]] inline double cross_entropy(const MatrixD& logits, std::span<const int> labels) {
    if (logits.rows() < 1 || static_cast<std::size_t>(logits.rows()) != labels.size()) {
        throw InvalidInput("cross_entropy: need one label per logits row and N >= 1");
    }
    double acc = 0.0;
    for (Eigen::Index n = 0; n < logits.rows(); ++n) acc += cross_entropy_row(logits.row(n), labels[static_cast<std::size_t>(n)]);
    return acc / static_cast<double>(logits.rows());
}

/// Mean over valid tokens of sqrt(P_i / E). The root is treated as flat below
/// an argument of 1e-12, so its gradient stays finite at P = 0. With `grad`,
/// writes dL/dH (padding rows get zero).
[[nodiscard]] inline double importance_loss(const RepresentationMatrix& masked, std::size_t embed_dim, MatrixD* grad = nullptr) {
    if (embed_dim < 1) throw InvalidInput("importance_loss: embed_dim must be >= 1");
    const MatrixD g = detail::gram(masked);
    const VectorD poly = detail::polysemanticity_from_gram(g);
    const auto t = g.rows();
    const double e = static_cast<double>(embed_dim);
    double loss = 0.0;
    VectorD dpoly = VectorD::Zero(t);
    for (Eigen::Index i = 0; i < t; ++i) {
        const double arg = poly(i) / e;
        loss += std::sqrt(arg);
        if (arg > kSqrtClamp) dpoly(i) = 1.0 / (2.0 * std::sqrt(arg) * e * static_cast<double>(t));
    }
    loss /= static_cast<double>(t);
    if (grad) {
        const auto h = masked.valid_rows();
        *grad = MatrixD::Zero(masked.rows.rows(), masked.rows.cols());
        const VectorD norms = detail::row_norms(g);
        for (Eigen::Index i = 0; i < t; ++i) {
            if (dpoly(i) == 0.0 || norms(i) < kNormEpsilon) continue;
            const RowVector<double> u = h.row(i) / norms(i);
            RowVector<double> pull = RowVector<double>::Zero(h.cols());
            for (Eigen::Index j = 0; j < t; ++j) {
                if (j == i) continue;
                const double c = g(i, j) / norms(i);
                grad->row(j) += 2.0 * dpoly(i) * c * u;
                pull += 2.0 * c * h.row(j);
            }
            grad->row(i) += dpoly(i) * (pull - pull.dot(u) * u) / norms(i);
        }
    }
    return loss;
}

/// sum_heads (1/T^2) sum_{i,j < T} A_ij (1 - (A A^T)_ij). Diagonal pairs included.
/// With `grad`, writes dL/dA per head (T x T).
[[nodiscard]] inline double interaction_loss(const std::vector<MatrixD>& attn, std::size_t valid_len, std::vector<MatrixD>* grad = nullptr) {
    if (valid_len < 1) throw InvalidInput("interaction_loss: valid_len must be >= 1");
    const auto t = static_cast<Eigen::Index>(valid_len);
    const double inv_t2 = 1.0 / (static_cast<double>(t) * static_cast<double>(t));
    double loss = 0.0;
    if (grad) grad->clear();
    for (const auto& full : attn) {
        if (full.rows() < t || full.cols() < t) throw InvalidInput("interaction_loss: attention smaller than valid_len");
        const MatrixD a = full.topLeftCorner(t, t);
        const MatrixD inter = a * a.transpose();
        loss += inv_t2 * (a.array() * (1.0 - inter.array())).sum();
        if (grad) {
            MatrixD d = (MatrixD::Ones(t, t) - inter - a * a - a.transpose() * a) * inv_t2;
            grad->push_back(std::move(d));
        }
    }
    return loss;
}

/// Mean KL(Bernoulli(p_i) || Bernoulli(0.5)) over valid tokens.
[[nodiscard]] inline double vmask_info_loss(const RowVector<double>& probs, std::size_t valid_len, RowVector<double>* grad = nullptr) {
    const auto t = static_cast<Eigen::Index>(valid_len);
    double loss = 0.0;
    if (grad) *grad = RowVector<double>::Zero(probs.size());
    for (Eigen::Index i = 0; i < t; ++i) {
        const double p = std::clamp(probs(i), kMaskProbClamp, 1.0 - kMaskProbClamp);
        loss += p * std::log(p) + (1.0 - p) * std::log(1.0 - p) + std::log(2.0);
        if (grad && probs(i) >= kMaskProbClamp && probs(i) <= 1.0 - kMaskProbClamp) {
            (*grad)(i) = std::log(p / (1.0 - p)) / static_cast<double>(t);
        }
    }
    return loss / static_cast<double>(t);
}

template <class S>
struct ExampleObjective {
    LossBreakdown loss;          // unscaled per-example values
    TraceGradients<S> grads;     // scaled by the caller's `scale`
};

/// Loss of one traced example and its upstream gradients, multiplied by `scale`
/// (1/N when averaging over a batch). The regularizers run in double precision.
template <class S>
[[nodiscard]] ExampleObjective<S> example_objective(const ForwardTrace<S>& tr, int label, const LossWeights& w, std::size_t embed_dim,
                                                    bool uses_vmask, double scale = 1.0, bool want_grads = true) {
    ExampleObjective<S> out;
    auto& l = out.loss;
    l.lambda_imp = w.lambda_imp;
    l.lambda_inter = w.lambda_inter;
    l.vmask_info_coeff = uses_vmask ? w.vmask_info : 0.0;
    const auto t = tr.valid_len;
    const auto heads = tr.attn_weights.size();

    RowVector<double> dlogits;
    l.l_ce = cross_entropy_row(tr.logits.template cast<double>(), label, want_grads ? &dlogits : nullptr, scale);
    if (want_grads) out.grads.logits = dlogits.template cast<S>();

    const RepresentationMatrix masked(LayerTag::vmask, tr.vmask_out.template cast<double>(), t);
    const bool imp_grad = want_grads && w.lambda_imp != 0.0;
    MatrixD dmasked;
    l.l_importance = importance_loss(masked, embed_dim, imp_grad ? &dmasked : nullptr);
    if (imp_grad) out.grads.vmask_out = (dmasked * (scale * w.lambda_imp)).template cast<S>();

    std::vector<MatrixD> attn;
    attn.reserve(heads);
    for (const auto& a : tr.attn_weights) attn.push_back(a.template cast<double>());
    const bool inter_grad = want_grads && w.lambda_inter != 0.0;
    std::vector<MatrixD> dattn;
    l.l_interaction = heads ? interaction_loss(attn, t, inter_grad ? &dattn : nullptr) / static_cast<double>(heads) : 0.0;
    if (inter_grad) {
        const double f = scale * w.lambda_inter / static_cast<double>(heads);
        for (auto& d : dattn) out.grads.attn_weights.push_back((d * f).template cast<S>());
    }

    if (l.vmask_info_coeff != 0.0) {
        RowVector<double> dprobs;
        l.l_vmask_info = vmask_info_loss(tr.mask_probs.template cast<double>(), t, want_grads ? &dprobs : nullptr);
        if (want_grads) out.grads.mask_probs = (dprobs * (scale * l.vmask_info_coeff)).template cast<S>();
    }
    l.recompute_total();
    return out;
}

/// Batch objective: per-example components averaged over the batch.
template <class S>
[[nodiscard]] LossBreakdown total_loss(std::span<const ForwardTrace<S>> traces, std::span<const int> labels, const LossWeights& w,
                                       std::size_t embed_dim, bool uses_vmask) {
    if (traces.empty() || traces.size() != labels.size()) throw InvalidInput("total_loss: need one label per trace and N >= 1");
    LossBreakdown sum;
    for (std::size_t n = 0; n < traces.size(); ++n) {
        const auto ex = example_objective<S>(traces[n], labels[n], w, embed_dim, uses_vmask, 1.0, false).loss;
        sum.l_ce += ex.l_ce;
        sum.l_importance += ex.l_importance;
        sum.l_interaction += ex.l_interaction;
        sum.l_vmask_info += ex.l_vmask_info;
    }
    const double inv_n = 1.0 / static_cast<double>(traces.size());
    sum.l_ce *= inv_n;
    sum.l_importance *= inv_n;
    sum.l_interaction *= inv_n;
    sum.l_vmask_info *= inv_n;
    sum.lambda_imp = w.lambda_imp;
    sum.lambda_inter = w.lambda_inter;
    sum.vmask_info_coeff = uses_vmask ? w.vmask_info : 0.0;
    sum.recompute_total();
    return sum;
}

} // namespace safr
