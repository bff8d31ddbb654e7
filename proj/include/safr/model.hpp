#pragma once

// Single-layer transformer classifier:
//   embedding -> word mask -> sinusoidal positions -> multi-head self-attention
//   (+ residual, layer norm) -> FFN E->4E->E with ReLU (+ residual, layer norm)
//   -> mean pooling over real tokens -> linear classifier.
// The forward pass records every intermediate in a ForwardTrace; backward()
// consumes that trace plus upstream gradients on the logits, the masked
// embeddings and the attention weights, and accumulates parameter gradients.

#include "safr/common.hpp"
#include "safr/data.hpp"
#include "safr/rng.hpp"
#include "safr/vmask.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace safr {

struct ModelConfig {
    std::size_t embed_dim = 256;
    std::size_t ffn_dim = 1024;
    std::size_t heads = 4;
    std::size_t num_classes = 2;
    std::size_t vocab_size = 0;
    std::size_t max_len = 64;
    double dropout = 0.1;
    std::uint64_t seed = 0;
    bool use_vmask = true;
    double vmask_temperature = 0.5;
    // Test-only switch; leaves attention permutation-equivariant.
    bool positional_encoding = true;

    [[nodiscard]] std::size_t head_dim() const { return embed_dim / heads; }

    void validate() const {
        if (embed_dim < 1 || ffn_dim < 1 || heads < 1 || num_classes < 1 || max_len < 1) {
            throw InvalidInput("model dimensions must all be >= 1");
        }
        if (embed_dim % heads != 0) throw InvalidInput("heads must divide embed_dim");
        if (vocab_size < 2) throw InvalidInput("vocab_size must include <pad> and <unk>");
        if (dropout < 0.0 || dropout >= 1.0) throw InvalidInput("dropout must be in [0, 1)");
        if (!(vmask_temperature > 0.0)) throw InvalidInput("vmask_temperature must be > 0");
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class S>
struct Parameters {
    Matrix<S> embedding;                 // V x E
    Matrix<S> vmask_w, vmask_b;          // 1 x E, 1 x 1
    std::vector<Matrix<S>> wq, wk, wv;   // per head, E x d_k
    Matrix<S> wo, bo;                    // E x E, 1 x E
    Matrix<S> ln1_gain, ln1_bias;
    Matrix<S> fc1_w, fc1_b;              // E x F, 1 x F
    Matrix<S> fc2_w, fc2_b;              // F x E, 1 x E
    Matrix<S> ln2_gain, ln2_bias;
    Matrix<S> cls_w, cls_b;              // E x G, 1 x G
    bool has_vmask = true;

    static Parameters zeros(const ModelConfig& c) {
        const auto e = static_cast<Eigen::Index>(c.embed_dim);
        const auto f = static_cast<Eigen::Index>(c.ffn_dim);
        const auto g = static_cast<Eigen::Index>(c.num_classes);
        const auto dk = static_cast<Eigen::Index>(c.head_dim());
        Parameters p;
        p.has_vmask = c.use_vmask;
        p.embedding = Matrix<S>::Zero(static_cast<Eigen::Index>(c.vocab_size), e);
        p.vmask_w = Matrix<S>::Zero(1, e);
        p.vmask_b = Matrix<S>::Zero(1, 1);
        for (std::size_t h = 0; h < c.heads; ++h) {
            p.wq.push_back(Matrix<S>::Zero(e, dk));
            p.wk.push_back(Matrix<S>::Zero(e, dk));
            p.wv.push_back(Matrix<S>::Zero(e, dk));
        }
        p.wo = Matrix<S>::Zero(e, e);
        p.bo = Matrix<S>::Zero(1, e);
        p.ln1_gain = Matrix<S>::Zero(1, e);
        p.ln1_bias = Matrix<S>::Zero(1, e);
        p.fc1_w = Matrix<S>::Zero(e, f);
        p.fc1_b = Matrix<S>::Zero(1, f);
        p.fc2_w = Matrix<S>::Zero(f, e);
        p.fc2_b = Matrix<S>::Zero(1, e);
        p.ln2_gain = Matrix<S>::Zero(1, e);
        p.ln2_bias = Matrix<S>::Zero(1, e);
        p.cls_w = Matrix<S>::Zero(e, g);
        p.cls_b = Matrix<S>::Zero(1, g);
        return p;
    }

    /// Visits every trainable tensor in a fixed order with its checkpoint name.
    template <class F>
    void visit(F&& f) {
        f(std::string("embedding"), embedding);
        if (has_vmask) {
            f(std::string("vmask.w"), vmask_w);
            f(std::string("vmask.b"), vmask_b);
        }
        for (std::size_t h = 0; h < wq.size(); ++h) {
            const std::string prefix = "attn.head" + std::to_string(h);
            f(prefix + ".wq", wq[h]);
            f(prefix + ".wk", wk[h]);
            f(prefix + ".wv", wv[h]);
        }
        f(std::string("attn.wo"), wo);
        f(std::string("attn.bo"), bo);
        f(std::string("ln1.gain"), ln1_gain);
        f(std::string("ln1.bias"), ln1_bias);
        f(std::string("fc1.w"), fc1_w);
        f(std::string("fc1.b"), fc1_b);
        f(std::string("fc2.w"), fc2_w);
        f(std::string("fc2.b"), fc2_b);
        f(std::string("ln2.gain"), ln2_gain);
        f(std::string("ln2.bias"), ln2_bias);
        f(std::string("cls.w"), cls_w);
        f(std::string("cls.b"), cls_b);
    }

    template <class F>
    void visit(F&& f) const {
        const_cast<Parameters*>(this)->visit([&](const std::string& name, Matrix<S>& m) { f(name, static_cast<const Matrix<S>&>(m)); });
    }

    void set_zero() {
        visit([](const std::string&, Matrix<S>& m) { m.setZero(); });
    }

    template <class T>
    [[nodiscard]] Parameters<T> cast() const {
        Parameters<T> out;
        out.has_vmask = has_vmask;
        out.embedding = embedding.template cast<T>();
        out.vmask_w = vmask_w.template cast<T>();
        out.vmask_b = vmask_b.template cast<T>();
        for (std::size_t h = 0; h < wq.size(); ++h) {
            out.wq.push_back(wq[h].template cast<T>());
            out.wk.push_back(wk[h].template cast<T>());
            out.wv.push_back(wv[h].template cast<T>());
        }
        out.wo = wo.template cast<T>();
        out.bo = bo.template cast<T>();
        out.ln1_gain = ln1_gain.template cast<T>();
        out.ln1_bias = ln1_bias.template cast<T>();
        out.fc1_w = fc1_w.template cast<T>();
        out.fc1_b = fc1_b.template cast<T>();
        out.fc2_w = fc2_w.template cast<T>();
        out.fc2_b = fc2_b.template cast<T>();
        out.ln2_gain = ln2_gain.template cast<T>();
        out.ln2_bias = ln2_bias.template cast<T>();
        out.cls_w = cls_w.template cast<T>();
        out.cls_b = cls_b.template cast<T>();
        return out;
    }

    [[nodiscard]] std::size_t count() const {
        std::size_t n = 0;
        visit([&](const std::string&, const Matrix<S>& m) { n += static_cast<std::size_t>(m.size()); });
        return n;
    }
};

/// Embedding rows ~ N(0, std = 1/sqrt(E)) with the pad row held at zero; dense
/// weights Xavier-uniform; biases zero; layer-norm gains one.
template <class S>
[[nodiscard]] Parameters<S> init_parameters(const ModelConfig& c) {
    c.validate();
    auto p = Parameters<S>::zeros(c);
    Rng rng(derive_seed(c.seed, "init"));
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(c.embed_dim));
    auto xavier = [&](Matrix<S>& m) {
        const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.uniform(-limit, limit));
    };
    p.visit([&](const std::string& name, Matrix<S>& m) {
        if (name == "embedding") {
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal(0.0, emb_std));
            m.row(Vocab::kPad).setZero();
        } else if (name == "ln1.gain" || name == "ln2.gain") {
            m.setOnes();
        } else if (name == "vmask.w") {
            xavier(m);
        } else if (m.rows() > 1) {
            xavier(m);
        }
    });
    return p;
}

/// Sinusoidal table: even dims sin(pos / 10000^(2i/E)), odd dims cos of the same angle.
template <class S>
[[nodiscard]] Matrix<S> positional_table(std::size_t len, std::size_t dim) {
    Matrix<S> pe(static_cast<Eigen::Index>(len), static_cast<Eigen::Index>(dim));
    for (std::size_t pos = 0; pos < len; ++pos) {
        for (std::size_t d = 0; d < dim; ++d) {
            const double rate = std::pow(10000.0, static_cast<double>(d - d % 2) / static_cast<double>(dim));
            const double angle = static_cast<double>(pos) / rate;
            pe(static_cast<Eigen::Index>(pos), static_cast<Eigen::Index>(d)) = static_cast<S>(d % 2 == 0 ? std::sin(angle) : std::cos(angle));
        }
    }
    return pe;
}

template <class S>
[[nodiscard]] Matrix<S> positional_encode(const Matrix<S>& masked, std::size_t max_len) {
    if (static_cast<std::size_t>(masked.rows()) > max_len) {
        throw InvalidInput("sequence length " + std::to_string(masked.rows()) + " exceeds max_len " + std::to_string(max_len));
    }
    return masked + positional_table<S>(static_cast<std::size_t>(masked.rows()), static_cast<std::size_t>(masked.cols()));
}

template <class S>
struct LayerNormCache {
    Matrix<S> xhat;
    RowVector<S> inv_std;   // one per row
};

inline constexpr double kLayerNormEpsilon = 1e-5;

template <class S>
[[nodiscard]] Matrix<S> layer_norm(const Matrix<S>& x, const Matrix<S>& gain, const Matrix<S>& bias, LayerNormCache<S>& cache) {
    const auto n = x.cols();
    cache.xhat.resize(x.rows(), n);
    cache.inv_std.resize(x.rows());
    Matrix<S> y(x.rows(), n);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S mean = x.row(r).mean();
        const S var = (x.row(r).array() - mean).square().mean();
        const S inv = S(1) / std::sqrt(var + S(kLayerNormEpsilon));
        cache.inv_std(r) = inv;
        cache.xhat.row(r) = (x.row(r).array() - mean) * inv;
        y.row(r) = cache.xhat.row(r).cwiseProduct(gain.row(0)) + bias.row(0);
    }
    return y;
}

template <class S>
[[nodiscard]] Matrix<S> layer_norm_backward(const LayerNormCache<S>& cache, const Matrix<S>& dy, const Matrix<S>& gain,
                                            Matrix<S>& dgain, Matrix<S>& dbias) {
    const auto n = static_cast<S>(dy.cols());
    dgain.row(0) += (dy.cwiseProduct(cache.xhat)).colwise().sum();
    dbias.row(0) += dy.colwise().sum();
    Matrix<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const RowVector<S> dxhat = dy.row(r).cwiseProduct(gain.row(0));
        const S mean_d = dxhat.sum() / n;
        const S mean_dx = dxhat.dot(cache.xhat.row(r)) / n;
        dx.row(r) = cache.inv_std(r) * (dxhat.array() - mean_d - cache.xhat.row(r).array() * mean_dx).matrix();
    }
    return dx;
}

template <class S>
struct AttentionCache {
    std::vector<Matrix<S>> q, k, v;
    std::vector<Matrix<S>> weights;        // A per head, pre-dropout
    std::vector<Matrix<S>> dropout_scale;  // empty when dropout is off
    Matrix<S> heads_concat;                // T x E
    LayerNormCache<S> norm;
};

template <class S>
struct AttentionResult {
    Matrix<S> out;   // post residual + layer norm
    AttentionCache<S> cache;
};

/// Per head A = row-softmax(Q K^T / sqrt(d_k)) with Q = X W^Q, K = X W^K; outputs
/// are concatenated, projected, added to X and layer-normalized. `x` holds only
/// real tokens; padding is reattached by the caller with zero attention mass.
template <class S>
[[nodiscard]] AttentionResult<S> attention_forward(const Matrix<S>& x, const Parameters<S>& p, double dropout, Rng* rng) {
    const auto t = x.rows();
    const auto heads = p.wq.size();
    const auto dk = p.wq.empty() ? Eigen::Index(0) : p.wq[0].cols();
    const S scale = S(1) / std::sqrt(static_cast<S>(dk));
    AttentionResult<S> r;
    auto& c = r.cache;
    c.heads_concat.resize(t, dk * static_cast<Eigen::Index>(heads));
    for (std::size_t h = 0; h < heads; ++h) {
        c.q.push_back(x * p.wq[h]);
        c.k.push_back(x * p.wk[h]);
        c.v.push_back(x * p.wv[h]);
        Matrix<S> scores = (c.q[h] * c.k[h].transpose()) * scale;
        for (Eigen::Index i = 0; i < t; ++i) {
            const S m = scores.row(i).maxCoeff();
            scores.row(i) = (scores.row(i).array() - m).exp().matrix();
            scores.row(i) /= scores.row(i).sum();
        }
        c.weights.push_back(scores);
        if (dropout > 0.0 && rng != nullptr) {
            Matrix<S> mask(t, t);
            const S keep = S(1) / static_cast<S>(1.0 - dropout);
            for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->bernoulli(dropout) ? S(0) : keep;
            c.heads_concat.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = scores.cwiseProduct(mask) * c.v[h];
            c.dropout_scale.push_back(std::move(mask));
        } else {
            c.heads_concat.middleCols(static_cast<Eigen::Index>(h) * dk, dk) = scores * c.v[h];
        }
    }
    Matrix<S> projected = c.heads_concat * p.wo;
    projected.rowwise() += p.bo.row(0);
    r.out = layer_norm<S>(x + projected, p.ln1_gain, p.ln1_bias, c.norm);
    return r;
}

template <class S>
struct FfnCache {
    Matrix<S> pre_activation;   // U
    Matrix<S> dropout_scale;    // empty when dropout is off
    LayerNormCache<S> norm;
};

template <class S>
struct FfnResult {
    Matrix<S> fc1_out;   // ReLU(U), T x F
    Matrix<S> fc2_out;   // layer norm(residual + FC2), T x E
    FfnCache<S> cache;
};

template <class S>
[[nodiscard]] FfnResult<S> ffn_forward(const Matrix<S>& attn_out, const Parameters<S>& p, double dropout, Rng* rng) {
    FfnResult<S> r;
    r.cache.pre_activation = attn_out * p.fc1_w;
    r.cache.pre_activation.rowwise() += p.fc1_b.row(0);
    r.fc1_out = r.cache.pre_activation.cwiseMax(S(0));
    Matrix<S> fc2 = r.fc1_out * p.fc2_w;
    fc2.rowwise() += p.fc2_b.row(0);
    if (dropout > 0.0 && rng != nullptr) {
        Matrix<S> mask(fc2.rows(), fc2.cols());
        const S keep = S(1) / static_cast<S>(1.0 - dropout);
        for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->bernoulli(dropout) ? S(0) : keep;
        fc2 = fc2.cwiseProduct(mask);
        r.cache.dropout_scale = std::move(mask);
    }
    r.fc2_out = layer_norm<S>(attn_out + fc2, p.ln2_gain, p.ln2_bias, r.cache.norm);
    return r;
}

/// Mean over the first `valid_len` rows, then a linear head.
template <class S>
[[nodiscard]] RowVector<S> classify(const Matrix<S>& fc2_out, std::size_t valid_len, const Parameters<S>& p, RowVector<S>* pooled_out = nullptr) {
    if (valid_len < 1 || valid_len > static_cast<std::size_t>(fc2_out.rows())) throw InvalidInput("classify: bad valid_len");
    const RowVector<S> pooled = fc2_out.topRows(static_cast<Eigen::Index>(valid_len)).colwise().mean();
    if (pooled_out) *pooled_out = pooled;
    return pooled * p.cls_w + p.cls_b;
}

template <class S>
struct ForwardTrace {
    std::size_t valid_len = 0;
    std::size_t padded_len = 0;
    std::vector<std::uint32_t> token_ids;   // valid prefix
    Mode mode = Mode::eval;

    // Public intermediates; rows/columns past valid_len are zero padding.
    Matrix<S> embedding;
    RowVector<S> mask_probs;     // ones when the word mask is disabled
    Matrix<S> vmask_out;         // S'
    Matrix<S> attn_input;        // X = S' + PE
    std::vector<Matrix<S>> attn_weights;
    Matrix<S> attn_out;
    Matrix<S> fc1_out;
    Matrix<S> fc2_out;
    RowVector<S> pooled;
    RowVector<S> logits;

    // Backward caches over the valid prefix.
    MaskState<S> mask;
    AttentionCache<S> attn_cache;
    FfnCache<S> ffn_cache;

    [[nodiscard]] Matrix<S> layer(LayerTag tag) const {
        switch (tag) {
        case LayerTag::embedding: return embedding;
        case LayerTag::vmask: return vmask_out;
        case LayerTag::attention_out: return attn_out;
        case LayerTag::fc1: return fc1_out;
        case LayerTag::fc2: return fc2_out;
        }
        throw InvalidInput("unknown layer tag");
    }

    [[nodiscard]] int predicted() const {
        Eigen::Index best = 0;
        for (Eigen::Index g = 1; g < logits.size(); ++g) {
            if (logits(g) > logits(best)) best = g;
        }
        return static_cast<int>(best);
    }
};

/// Upstream gradients flowing into the trace from the loss. Empty members are
/// treated as zero.
template <class S>
struct TraceGradients {
    RowVector<S> logits;
    Matrix<S> vmask_out;
    std::vector<Matrix<S>> attn_weights;
    RowVector<S> mask_probs;
};

template <class S>
class Model {
public:
    Model() = default;
    Model(ModelConfig config, Parameters<S> params) : config_(std::move(config)), params_(std::move(params)) {
        config_.validate();
        pe_ = positional_table<S>(config_.max_len, config_.embed_dim);
    }

    [[nodiscard]] static Model initialized(const ModelConfig& config) { return Model(config, init_parameters<S>(config)); }

    [[nodiscard]] const ModelConfig& config() const { return config_; }
    [[nodiscard]] const Parameters<S>& params() const { return params_; }
    [[nodiscard]] Parameters<S>& params() { return params_; }

    [[nodiscard]] Matrix<S> embed(std::span<const std::uint32_t> ids) const {
        Matrix<S> out(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(config_.embed_dim));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] >= config_.vocab_size) {
                throw InvalidInput("token id " + std::to_string(ids[i]) + " out of range for vocabulary of " +
                                   std::to_string(config_.vocab_size));
            }
            out.row(static_cast<Eigen::Index>(i)) = params_.embedding.row(ids[i]);
        }
        return out;
    }

    /// `ids` may carry right padding past `valid_len`; computation runs on the
    /// valid prefix and the public trace fields are zero-padded back out.
    [[nodiscard]] ForwardTrace<S> forward(std::span<const std::uint32_t> ids, std::size_t valid_len, Mode mode, Rng* rng) const {
        if (valid_len < 1 || valid_len > ids.size()) throw InvalidInput("forward: valid_len must be in [1, len(ids)]");
        if (valid_len > config_.max_len) {
            throw InvalidInput("sequence length " + std::to_string(valid_len) + " exceeds max_len " + std::to_string(config_.max_len));
        }
        if (mode == Mode::train && rng == nullptr) throw InvalidInput("train-mode forward needs an rng");
        const auto t = static_cast<Eigen::Index>(valid_len);
        ForwardTrace<S> tr;
        tr.valid_len = valid_len;
        tr.padded_len = ids.size();
        tr.mode = mode;
        tr.token_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(valid_len));
        tr.embedding = embed(tr.token_ids);

        if (config_.use_vmask) {
            const RowVector<S> w = params_.vmask_w.row(0);
            tr.mask_probs = mask_probs<S>(tr.embedding, w, params_.vmask_b(0, 0), valid_len);
            tr.mask = sample_mask<S>(tr.mask_probs, static_cast<S>(config_.vmask_temperature), mode, rng, valid_len);
            tr.vmask_out = apply_mask<S>(tr.embedding, tr.mask.samples);
        } else {
            tr.mask_probs = RowVector<S>::Ones(t);
            tr.vmask_out = tr.embedding;
        }

        tr.attn_input = tr.vmask_out;
        if (config_.positional_encoding) tr.attn_input += pe_.topRows(t);

        const double drop = mode == Mode::train ? config_.dropout : 0.0;
        Rng* drop_rng = mode == Mode::train ? rng : nullptr;
        auto attn = attention_forward<S>(tr.attn_input, params_, drop, drop_rng);
        tr.attn_out = std::move(attn.out);
        tr.attn_cache = std::move(attn.cache);
        tr.attn_weights = tr.attn_cache.weights;

        auto ffn = ffn_forward<S>(tr.attn_out, params_, drop, drop_rng);
        tr.fc1_out = std::move(ffn.fc1_out);
        tr.fc2_out = std::move(ffn.fc2_out);
        tr.ffn_cache = std::move(ffn.cache);

        tr.logits = classify<S>(tr.fc2_out, valid_len, params_, &tr.pooled);

        if (ids.size() > valid_len) pad_trace(tr, static_cast<Eigen::Index>(ids.size()));
        return tr;
    }

    [[nodiscard]] ForwardTrace<S> forward(const TokenizedExample& ex, Mode mode = Mode::eval, Rng* rng = nullptr) const {
        return forward(std::span<const std::uint32_t>(ex.token_ids), ex.length(), mode, rng);
    }

    [[nodiscard]] int predict(const TokenizedExample& ex) const { return forward(ex).predicted(); }

    /// Accumulates dLoss/dParams into `grads` (which is not cleared).
    void backward(const ForwardTrace<S>& tr, const TraceGradients<S>& up, Parameters<S>& grads) const {
        const auto t = static_cast<Eigen::Index>(tr.valid_len);
        const auto& p = params_;
        const auto heads = p.wq.size();
        const auto dk = static_cast<Eigen::Index>(config_.head_dim());
        const S attn_scale = S(1) / std::sqrt(static_cast<S>(dk));

        // Classifier and pooling.
        grads.cls_w += tr.pooled.transpose() * up.logits;
        grads.cls_b.row(0) += up.logits;
        const RowVector<S> dpooled = up.logits * p.cls_w.transpose();
        Matrix<S> d_fc2_out = (Matrix<S>::Ones(t, 1) * dpooled) / static_cast<S>(t);

        // FFN block.
        Matrix<S> d_resid2 = layer_norm_backward<S>(tr.ffn_cache.norm, d_fc2_out, p.ln2_gain, grads.ln2_gain, grads.ln2_bias);
        Matrix<S> d_attn_out = d_resid2;
        Matrix<S> d_fc2 = tr.ffn_cache.dropout_scale.size() ? Matrix<S>(d_resid2.cwiseProduct(tr.ffn_cache.dropout_scale)) : d_resid2;
        const auto fc1_valid = tr.fc1_out.topRows(t);
        grads.fc2_w += fc1_valid.transpose() * d_fc2;
        grads.fc2_b.row(0) += d_fc2.colwise().sum();
        Matrix<S> d_pre = (d_fc2 * p.fc2_w.transpose()).cwiseProduct((tr.ffn_cache.pre_activation.array() > S(0)).template cast<S>().matrix());
        const auto attn_out_valid = tr.attn_out.topRows(t);
        grads.fc1_w += attn_out_valid.transpose() * d_pre;
        grads.fc1_b.row(0) += d_pre.colwise().sum();
        d_attn_out += d_pre * p.fc1_w.transpose();

        // Attention block.
        Matrix<S> d_resid1 = layer_norm_backward<S>(tr.attn_cache.norm, d_attn_out, p.ln1_gain, grads.ln1_gain, grads.ln1_bias);
        Matrix<S> dx = d_resid1;
        grads.wo += tr.attn_cache.heads_concat.transpose() * d_resid1;
        grads.bo.row(0) += d_resid1.colwise().sum();
        const Matrix<S> d_concat = d_resid1 * p.wo.transpose();
        const auto x_valid = tr.attn_input.topRows(t);
        for (std::size_t h = 0; h < heads; ++h) {
            const auto hh = static_cast<Eigen::Index>(h);
            const Matrix<S> d_head = d_concat.middleCols(hh * dk, dk);
            const Matrix<S>& a = tr.attn_cache.weights[h];
            const bool dropped = !tr.attn_cache.dropout_scale.empty();
            const Matrix<S> a_used = dropped ? Matrix<S>(a.cwiseProduct(tr.attn_cache.dropout_scale[h])) : a;
            const Matrix<S> dv = a_used.transpose() * d_head;
            Matrix<S> da = d_head * tr.attn_cache.v[h].transpose();
            if (dropped) da = da.cwiseProduct(tr.attn_cache.dropout_scale[h]);
            if (h < up.attn_weights.size() && up.attn_weights[h].size() != 0) da += up.attn_weights[h].topLeftCorner(t, t);
            Matrix<S> dscores(t, t);
            for (Eigen::Index i = 0; i < t; ++i) {
                const S dotp = da.row(i).dot(a.row(i));
                dscores.row(i) = a.row(i).cwiseProduct((da.row(i).array() - dotp).matrix());
            }
            dscores *= attn_scale;
            const Matrix<S> dq = dscores * tr.attn_cache.k[h];
            const Matrix<S> dk_ = dscores.transpose() * tr.attn_cache.q[h];
            grads.wq[h] += x_valid.transpose() * dq;
            grads.wk[h] += x_valid.transpose() * dk_;
            grads.wv[h] += x_valid.transpose() * dv;
            dx += dq * p.wq[h].transpose() + dk_ * p.wk[h].transpose() + dv * p.wv[h].transpose();
        }

        // Positional encoding is additive; dS' = dX.
        Matrix<S> d_masked = dx;
        if (up.vmask_out.size() != 0) d_masked += up.vmask_out.topRows(t);

        const auto emb_valid = tr.embedding.topRows(t);
        Matrix<S> d_emb;
        if (config_.use_vmask) {
            const RowVector<S> z = tr.mask.samples.head(t);
            RowVector<S> dz(t);
            for (Eigen::Index i = 0; i < t; ++i) dz(i) = d_masked.row(i).dot(emb_valid.row(i));
            d_emb = z.transpose().asDiagonal() * d_masked;
            RowVector<S> dp = sample_mask_backward<S>(tr.mask, dz, tr.valid_len);
            if (up.mask_probs.size() != 0) dp += up.mask_probs.head(t);
            RowVector<S> dlogit(t);
            for (Eigen::Index i = 0; i < t; ++i) {
                const S pi = tr.mask_probs(i);
                dlogit(i) = dp(i) * pi * (S(1) - pi);
            }
            grads.vmask_w.row(0) += dlogit * emb_valid;
            grads.vmask_b(0, 0) += dlogit.sum();
            d_emb += dlogit.transpose() * p.vmask_w.row(0);
        } else {
            d_emb = d_masked;
        }

        for (Eigen::Index i = 0; i < t; ++i) {
            const auto id = tr.token_ids[static_cast<std::size_t>(i)];
            if (id == Vocab::kPad) continue;   // frozen
            grads.embedding.row(id) += d_emb.row(i);
        }
    }

private:
    static void pad_rows(Matrix<S>& m, Eigen::Index rows) {
        Matrix<S> out = Matrix<S>::Zero(rows, m.cols());
        out.topRows(m.rows()) = m;
        m = std::move(out);
    }

    static void pad_trace(ForwardTrace<S>& tr, Eigen::Index rows) {
        pad_rows(tr.embedding, rows);
        pad_rows(tr.vmask_out, rows);
        pad_rows(tr.attn_input, rows);
        pad_rows(tr.attn_out, rows);
        pad_rows(tr.fc1_out, rows);
        pad_rows(tr.fc2_out, rows);
        RowVector<S> probs = RowVector<S>::Zero(rows);
        probs.head(tr.mask_probs.size()) = tr.mask_probs;
        tr.mask_probs = std::move(probs);
        for (auto& a : tr.attn_weights) {
            Matrix<S> out = Matrix<S>::Zero(rows, rows);
            out.topLeftCorner(a.rows(), a.cols()) = a;
            a = std::move(out);
        }
    }

    ModelConfig config_;
    Parameters<S> params_;
    Matrix<S> pe_;
};

} // namespace safr
