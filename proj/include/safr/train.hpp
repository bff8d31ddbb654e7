#pragma once

#include "safr/checkpoint.hpp"
#include "safr/dataset_io.hpp"
#include "safr/eval.hpp"
#include "safr/loss.hpp"
#include "safr/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace safr {

struct TrainConfig {
    double lambda_imp = 0.0;
    double lambda_inter = 0.0;
    double vmask_info = 0.0;
    std::size_t epochs = 10;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_norm = 1.0;   // <= 0 disables clipping
    std::uint64_t seed = 0;
    std::size_t patience = 3;
    std::size_t eval_every = 0;   // steps between dev evaluations; 0 = end of each epoch

    [[nodiscard]] LossWeights weights() const { return {lambda_imp, lambda_inter, vmask_info}; }

    void validate() const {
        if (epochs < 1) throw InvalidInput("epochs must be >= 1");
        if (batch_size < 1) throw InvalidInput("batch_size must be >= 1");
        if (!(lr > 0.0)) throw InvalidInput("learning rate must be > 0");
        for (double w : {lambda_imp, lambda_inter, vmask_info}) {
            if (!(w >= 0.0 && std::isfinite(w))) throw InvalidInput("loss weights must be finite and >= 0");
        }
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw InvalidInput("Adam betas must be in [0, 1)");
    }
};

/// Raised when a loss component or the gradient stops being finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StepRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    LossBreakdown loss;
    std::optional<double> dev_accuracy;
};

struct EvalRecord {
    std::size_t step = 0;
    std::size_t epoch = 0;
    double dev_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<EvalRecord> evals;
    std::size_t best_eval = 0;
    std::size_t best_epoch = 0;
    bool early_stopped = false;
};

struct TrainResult {
    Checkpoint checkpoint;
    TrainHistory history;
};

template <class S>
class Adam {
public:
    Adam(const ModelConfig& config, const TrainConfig& tc)
        : m_(Parameters<S>::zeros(config)), v_(Parameters<S>::zeros(config)), tc_(tc) {}

    void step(Parameters<S>& params, Parameters<S>& grads) {
        ++t_;
        const double c1 = 1.0 - std::pow(tc_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(tc_.beta2, static_cast<double>(t_));
        const S b1 = static_cast<S>(tc_.beta1);
        const S b2 = static_cast<S>(tc_.beta2);
        const S step_size = static_cast<S>(tc_.lr / c1);
        const S inv_c2 = static_cast<S>(1.0 / c2);
        const S eps = static_cast<S>(tc_.adam_eps);
        std::vector<Matrix<S>*> ms, vs, gs;
        m_.visit([&](const std::string&, Matrix<S>& x) { ms.push_back(&x); });
        v_.visit([&](const std::string&, Matrix<S>& x) { vs.push_back(&x); });
        grads.visit([&](const std::string&, Matrix<S>& x) { gs.push_back(&x); });
        std::size_t idx = 0;
        params.visit([&](const std::string&, Matrix<S>& p) {
            auto& m = *ms[idx];
            auto& v = *vs[idx];
            const auto& g = *gs[idx];
            ++idx;
            m = b1 * m + (S(1) - b1) * g;
            v = b2 * v + (S(1) - b2) * g.cwiseProduct(g);
            p.array() -= step_size * m.array() / ((v.array() * inv_c2).sqrt() + eps);
        });
    }

private:
    Parameters<S> m_, v_;
    TrainConfig tc_;
    std::size_t t_ = 0;
};

template <class S>
[[nodiscard]] double global_norm(const Parameters<S>& grads) {
    double sq = 0.0;
    grads.visit([&](const std::string&, const Matrix<S>& g) { sq += g.template cast<double>().squaredNorm(); });
    return std::sqrt(sq);
}

/// Throws TrainingDiverged naming the first non-finite loss component.
inline void check_loss_finite(const LossBreakdown& l, std::size_t step) {
    const std::pair<const char*, double> parts[] = {{"l_ce", l.l_ce},
                                                    {"l_importance", l.l_importance},
                                                    {"l_interaction", l.l_interaction},
                                                    {"l_vmask_info", l.l_vmask_info},
                                                    {"total", l.total}};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) throw TrainingDiverged(std::string("non-finite ") + name + " at step " + std::to_string(step));
    }
}

/// Sums the gradients of a batch into `grads` (cleared first) in example order
/// and returns the batch-mean loss breakdown.
template <class S>
LossBreakdown batch_gradients(const Model<S>& model, const Batch& batch, const LossWeights& w, Mode mode, Rng& rng,
                              Parameters<S>& grads) {
    grads.set_zero();
    LossBreakdown sum;
    const double scale = 1.0 / static_cast<double>(batch.size());
    const auto& cfg = model.config();
    std::vector<std::uint32_t> ids;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto len = batch.lengths[b];
        ids.resize(len);
        for (std::size_t t = 0; t < len; ++t) ids[t] = static_cast<std::uint32_t>(batch.token_ids(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(t)));
        const auto tr = model.forward(ids, len, mode, &rng);
        const auto obj = example_objective<S>(tr, batch.labels[b], w, cfg.embed_dim, cfg.use_vmask, scale);
        model.backward(tr, obj.grads, grads);
        sum.l_ce += obj.loss.l_ce * scale;
        sum.l_importance += obj.loss.l_importance * scale;
        sum.l_interaction += obj.loss.l_interaction * scale;
        sum.l_vmask_info += obj.loss.l_vmask_info * scale;
        sum.lambda_imp = obj.loss.lambda_imp;
        sum.lambda_inter = obj.loss.lambda_inter;
        sum.vmask_info_coeff = obj.loss.vmask_info_coeff;
    }
    sum.recompute_total();
    return sum;
}

/// Minibatch Adam on the combined objective, keeping the parameters with the
/// best dev accuracy. Deterministic for a given (configs, dataset): shuffles,
/// mask noise and dropout all come from substreams of `tc.seed`, and batch
/// gradients are reduced in example order.
inline TrainResult train(ModelConfig mc, const TrainConfig& tc, const Dataset& ds,
                         const std::function<void(const StepRecord&)>& on_step = {}) {
    tc.validate();
    mc.vocab_size = ds.vocab.size();
    mc.num_classes = ds.num_classes;
    mc.max_len = ds.max_len;
    mc.validate();
    if (ds.train.examples.empty() || ds.dev.examples.empty()) throw InvalidInput("train: dataset needs train and dev examples");

    auto model = Model<float>::initialized(mc);
    Adam<float> opt(mc, tc);
    auto grads = Parameters<float>::zeros(mc);
    Rng noise(derive_seed(tc.seed, "mask"));
    const auto weights = tc.weights();

    TrainResult result;
    auto& hist = result.history;
    std::optional<Parameters<float>> best_params;
    double best_acc = -1.0;
    std::size_t since_best = 0;
    std::size_t step = 0;

    auto evaluate = [&](std::size_t epoch) {
        const double acc = accuracy(model, ds.dev);
        hist.evals.push_back({step, epoch, acc});
        if (!hist.steps.empty()) hist.steps.back().dev_accuracy = acc;
        if (acc > best_acc) {
            best_acc = acc;
            best_params = model.params();
            hist.best_eval = hist.evals.size() - 1;
            hist.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        return tc.patience > 0 && since_best >= tc.patience;
    };

    bool stop = false;
    for (std::size_t epoch = 1; epoch <= tc.epochs && !stop; ++epoch) {
        const auto batches = make_batches(ds.train, tc.batch_size, derive_seed(tc.seed, "shuffle", epoch));
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const auto& batch = batches[bi];
            ++step;
            auto loss = batch_gradients(model, batch, weights, Mode::train, noise, grads);
            check_loss_finite(loss, step);
            const double norm = global_norm(grads);
            if (!std::isfinite(norm)) throw TrainingDiverged("non-finite gradient at step " + std::to_string(step));
            if (tc.clip_norm > 0.0 && norm > tc.clip_norm) {
                const auto f = static_cast<float>(tc.clip_norm / norm);
                grads.visit([&](const std::string&, Matrix<float>& g) { g *= f; });
            }
            opt.step(model.params(), grads);
            model.params().embedding.row(Vocab::kPad).setZero();
            hist.steps.push_back({step, epoch, loss, std::nullopt});
            const bool due = tc.eval_every > 0 ? step % tc.eval_every == 0 : bi + 1 == batches.size();
            if (due && evaluate(epoch)) stop = true;
            if (on_step) on_step(hist.steps.back());
            if (stop) break;
        }
    }
    if (hist.evals.empty() || (tc.eval_every > 0 && hist.evals.back().step != step)) evaluate(hist.steps.back().epoch);
    hist.early_stopped = stop;

    auto& ck = result.checkpoint;
    ck.config = mc;
    ck.vocab = ds.vocab;
    ck.params = std::move(*best_params);
    ck.seed = tc.seed;
    ck.epoch = static_cast<std::uint32_t>(hist.best_epoch);
    ck.dev_accuracy = best_acc;
    ck.lambda_imp = tc.lambda_imp;
    ck.lambda_inter = tc.lambda_inter;
    return result;
}

inline void write_training_log(std::ostream& out, const TrainHistory& hist) {
    out << "step\tl_ce\tl_imp\tl_inter\ttotal\tdev_acc\n";
    char buf[256];
    for (const auto& s : hist.steps) {
        std::snprintf(buf, sizeof buf, "%zu\t%.17g\t%.17g\t%.17g\t%.17g\t", s.step, s.loss.l_ce, s.loss.l_importance, s.loss.l_interaction,
                      s.loss.total);
        out << buf;
        if (s.dev_accuracy) {
            std::snprintf(buf, sizeof buf, "%.17g", *s.dev_accuracy);
            out << buf;
        }
        out << "\n";
    }
}

inline void write_training_log(const std::string& path, const TrainHistory& hist) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    write_training_log(out, hist);
}

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t entries_checked = 0;
    std::size_t entries_compared = 0;   // checked entries above the magnitude floor
    std::string worst_tensor;
    std::vector<std::pair<std::string, double>> per_tensor;   // max relative error per tensor
};

struct GradCheckOptions {
    double step_size = 1e-5;
    std::size_t samples_per_tensor = 64;
    double magnitude_floor = 1e-8;
    Mode mode = Mode::train;
    std::uint64_t seed = 0;
};

/// Objective value of one example under a fixed noise seed, so repeated calls see
/// identical mask samples and dropout.
[[nodiscard]] inline double example_loss(const Model<double>& model, const TokenizedExample& ex, const LossWeights& w, Mode mode,
                                         std::uint64_t seed) {
    Rng rng(seed);
    const auto tr = model.forward(ex, mode, &rng);
    return example_objective<double>(tr, ex.label, w, model.config().embed_dim, model.config().use_vmask, 1.0, false).loss.total;
}

/// Central finite differences against the analytic gradient, over every parameter
/// tensor (all entries of small tensors, `samples_per_tensor` sampled entries of
/// large ones; embedding rows used by the example are always included).
inline GradCheckReport grad_check(Model<double> model, const TokenizedExample& ex, const LossWeights& w, const GradCheckOptions& opt = {}) {
    if (!(opt.step_size > 0.0)) throw InvalidInput("grad_check: step_size must be > 0");
    const auto noise_seed = derive_seed(opt.seed, "gradcheck-noise");

    auto analytic = Parameters<double>::zeros(model.config());
    {
        Rng rng(noise_seed);
        const auto tr = model.forward(ex, opt.mode, &rng);
        const auto obj = example_objective<double>(tr, ex.label, w, model.config().embed_dim, model.config().use_vmask, 1.0);
        model.backward(tr, obj.grads, analytic);
    }
    std::vector<Matrix<double>*> grad_tensors;
    analytic.visit([&](const std::string&, Matrix<double>& g) { grad_tensors.push_back(&g); });

    GradCheckReport rep;
    Rng pick(derive_seed(opt.seed, "gradcheck-pick"));
    std::size_t tensor_idx = 0;
    std::vector<std::pair<std::string, Matrix<double>*>> params;
    model.params().visit([&](const std::string& name, Matrix<double>& p) { params.emplace_back(name, &p); });
    for (auto& [name, p] : params) {
        const auto& g = *grad_tensors[tensor_idx++];
        std::set<Eigen::Index> entries;
        if (name == "embedding") {
            for (auto id : ex.token_ids) {
                for (Eigen::Index c = 0; c < p->cols(); ++c) entries.insert(static_cast<Eigen::Index>(id) * p->cols() + c);
            }
        }
        if (static_cast<std::size_t>(p->size()) <= opt.samples_per_tensor) {
            for (Eigen::Index i = 0; i < p->size(); ++i) entries.insert(i);
        } else {
            const auto target = std::min<std::size_t>(entries.size() + opt.samples_per_tensor, static_cast<std::size_t>(p->size()));
            while (entries.size() < target) entries.insert(static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(p->size()))));
        }
        double worst = 0.0;
        for (auto i : entries) {
            double& x = p->data()[i];
            const double saved = x;
            x = saved + opt.step_size;
            const double up = example_loss(model, ex, w, opt.mode, noise_seed);
            x = saved - opt.step_size;
            const double down = example_loss(model, ex, w, opt.mode, noise_seed);
            x = saved;
            const double numeric = (up - down) / (2.0 * opt.step_size);
            const double a = g.data()[i];
            ++rep.entries_checked;
            const double mag = std::max(std::abs(a), std::abs(numeric));
            if (mag <= opt.magnitude_floor) continue;
            ++rep.entries_compared;
            const double rel = std::abs(a - numeric) / mag;
            worst = std::max(worst, rel);
        }
        rep.per_tensor.emplace_back(name, worst);
        if (worst > rep.max_relative_error || rep.worst_tensor.empty()) {
            if (worst >= rep.max_relative_error) rep.worst_tensor = name;
            rep.max_relative_error = std::max(rep.max_relative_error, worst);
        }
    }
    return rep;
}

} // namespace safr
