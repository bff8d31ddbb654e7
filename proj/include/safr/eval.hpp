#pragma once

// Deletion-based faithfulness evaluation. Tokens are ranked by their capacity
// at a chosen layer (FC1 by default); removing the top k% and re-classifying
// the shortened text measures how much the ranking tracks what the model
// needs. The random-deletion baseline removes the same number of tokens.

#include "safr/common.hpp"
#include "safr/data.hpp"
#include "safr/model.hpp"
#include "safr/repr_metrics.hpp"
#include "safr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

namespace safr {

template <class S>
[[nodiscard]] double accuracy(const Model<S>& model, const DatasetSplit& split) {
    if (split.examples.empty()) throw InvalidInput("accuracy: empty split");
    std::size_t correct = 0;
    for (const auto& ex : split.examples) correct += model.predict(ex) == ex.label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

template <class S>
[[nodiscard]] RepresentationMatrix representation(const ForwardTrace<S>& tr, LayerTag tag) {
    return {tag, tr.layer(tag).template cast<double>(), tr.valid_len};
}

/// Valid positions ordered by capacity, highest first; ties keep the earlier position first.
[[nodiscard]] inline std::vector<std::size_t> rank_by_scores(const VectorD& scores) {
    std::vector<std::size_t> order(static_cast<std::size_t>(scores.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores(static_cast<Eigen::Index>(a)) > scores(static_cast<Eigen::Index>(b));
    });
    return order;
}

template <class S>
[[nodiscard]] std::vector<std::size_t> rank_tokens_by_capacity(const ForwardTrace<S>& tr, LayerTag layer) {
    return rank_by_scores(capacity(representation(tr, layer)));
}

/// Number of tokens removed for k%: floor(k*T/100), at least one when k > 0,
/// and never all T.
[[nodiscard]] inline std::size_t deletion_count(std::size_t length, double k) {
    if (!(k >= 0.0 && k <= 100.0)) throw InvalidInput("k must be in [0, 100]");
    if (length == 0) throw InvalidInput("cannot delete from an empty example");
    if (k == 0.0) return 0;
    auto m = static_cast<std::size_t>(std::floor(k * static_cast<double>(length) / 100.0));
    m = std::max<std::size_t>(m, 1);
    return std::min(m, length - 1);
}

namespace detail {

inline TokenizedExample keep_positions(const TokenizedExample& ex, const std::vector<bool>& removed) {
    TokenizedExample out;
    out.label = ex.label;
    for (std::size_t i = 0; i < ex.length(); ++i) {
        if (removed[i]) continue;
        out.token_ids.push_back(ex.token_ids[i]);
        out.tokens.push_back(ex.tokens[i]);
    }
    return out;
}

} // namespace detail

/// Drops the first deletion_count(T, k) positions of `ranking`; survivors keep their order.
[[nodiscard]] inline TokenizedExample delete_topk(const TokenizedExample& ex, const std::vector<std::size_t>& ranking, double k) {
    const auto t = ex.length();
    const auto m = deletion_count(t, k);
    if (ranking.size() != t) throw InvalidInput("ranking length does not match example length");
    std::vector<bool> removed(t, false);
    for (std::size_t r = 0; r < m; ++r) {
        if (ranking[r] >= t || removed[ranking[r]]) throw InvalidInput("ranking is not a permutation of positions");
        removed[ranking[r]] = true;
    }
    return detail::keep_positions(ex, removed);
}

/// Drops deletion_count(T, k) positions sampled uniformly without replacement.
[[nodiscard]] inline TokenizedExample delete_random(const TokenizedExample& ex, double k, std::uint64_t seed) {
    const auto t = ex.length();
    const auto m = deletion_count(t, k);
    std::vector<std::size_t> pos(t);
    std::iota(pos.begin(), pos.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < m; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(t - i));
        std::swap(pos[i], pos[j]);
    }
    std::vector<bool> removed(t, false);
    for (std::size_t i = 0; i < m; ++i) removed[pos[i]] = true;
    return detail::keep_positions(ex, removed);
}

struct SrsReport {
    double k = 0.0;
    double acc_original = 0.0;                 // percent
    double acc_random = 0.0;                   // percent, mean over seeds
    std::vector<double> acc_random_per_seed;   // percent
    double acc_capacity = 0.0;                 // percent
    double srs = 0.0;                          // acc_original - acc_capacity, percentage points
    LayerTag layer = LayerTag::fc1;
    std::size_t n = 0;
};

inline const std::vector<std::uint64_t> kDefaultRandomSeeds = {1, 2, 3, 4, 5};

using TokenRanker = std::function<std::vector<std::size_t>(std::size_t example_index, const TokenizedExample&)>;

/// Runs the original forward pass once per example and reuses predictions and
/// rankings across any number of k values.
template <class S>
class SrsEvaluator {
public:
    SrsEvaluator(const Model<S>& model, const DatasetSplit& split, LayerTag layer, std::vector<std::uint64_t> random_seeds = kDefaultRandomSeeds,
                 TokenRanker ranker = {})
        : model_(model), split_(split), layer_(layer), seeds_(std::move(random_seeds)) {
        if (split.examples.empty()) throw InvalidInput("srs: empty split");
        correct_.reserve(split.size());
        rankings_.reserve(split.size());
        for (std::size_t i = 0; i < split.size(); ++i) {
            const auto& ex = split.examples[i];
            const auto tr = model_.forward(ex);
            correct_.push_back(tr.predicted() == ex.label);
            rankings_.push_back(ranker ? ranker(i, ex) : rank_tokens_by_capacity(tr, layer_));
        }
    }

    [[nodiscard]] SrsReport evaluate(double k) const {
        if (!(k >= 0.0 && k <= 100.0)) throw InvalidInput("k must be in [0, 100]");
        const auto n = split_.size();
        std::size_t orig = 0;
        std::size_t cap = 0;
        for (std::size_t i = 0; i < n; ++i) {
            orig += correct_[i] ? 1 : 0;
            if (k == 0.0) {
                cap += correct_[i] ? 1 : 0;
                continue;
            }
            const auto& ex = split_.examples[i];
            cap += model_.predict(delete_topk(ex, rankings_[i], k)) == ex.label ? 1 : 0;
        }
        SrsReport r;
        r.k = k;
        r.layer = layer_;
        r.n = n;
        r.acc_original = 100.0 * static_cast<double>(orig) / static_cast<double>(n);
        r.acc_capacity = 100.0 * static_cast<double>(cap) / static_cast<double>(n);
        r.srs = r.acc_original - r.acc_capacity;
        double sum = 0.0;
        for (auto seed : seeds_) {
            std::size_t ok = 0;
            for (std::size_t i = 0; i < n; ++i) {
                const auto& ex = split_.examples[i];
                if (k == 0.0) {
                    ok += correct_[i] ? 1 : 0;
                    continue;
                }
                ok += model_.predict(delete_random(ex, k, derive_seed(seed, "deletion", i))) == ex.label ? 1 : 0;
            }
            const double acc = 100.0 * static_cast<double>(ok) / static_cast<double>(n);
            r.acc_random_per_seed.push_back(acc);
            sum += acc;
        }
        r.acc_random = seeds_.empty() ? r.acc_original : sum / static_cast<double>(seeds_.size());
        return r;
    }

private:
    const Model<S>& model_;
    const DatasetSplit& split_;
    LayerTag layer_;
    std::vector<std::uint64_t> seeds_;
    std::vector<bool> correct_;
    std::vector<std::vector<std::size_t>> rankings_;
};

template <class S>
[[nodiscard]] SrsReport srs(const Model<S>& model, const DatasetSplit& split, double k, LayerTag layer = LayerTag::fc1,
                            const std::vector<std::uint64_t>& random_seeds = kDefaultRandomSeeds) {
    return SrsEvaluator<S>(model, split, layer, random_seeds).evaluate(k);
}

template <class S>
[[nodiscard]] std::vector<SrsReport> sensitivity_curve(const Model<S>& model, const DatasetSplit& split, const std::vector<double>& ks,
                                                       LayerTag layer = LayerTag::fc1,
                                                       const std::vector<std::uint64_t>& random_seeds = kDefaultRandomSeeds) {
    if (ks.empty()) throw InvalidInput("sensitivity_curve: no k values");
    if (!std::is_sorted(ks.begin(), ks.end())) throw InvalidInput("sensitivity_curve: ks must be ascending");
    SrsEvaluator<S> ev(model, split, layer, random_seeds);
    std::vector<SrsReport> out;
    for (double k : ks) out.push_back(ev.evaluate(k));
    return out;
}

inline void write_srs_tsv(const std::string& path, const std::vector<SrsReport>& reports) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "k\tacc_s\tacc_r\tacc_k\tsrs\n";
    char buf[256];
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%g\t%.4f\t%.4f\t%.4f\t%.4f\n", r.k, r.acc_original, r.acc_random, r.acc_capacity, r.srs);
        out << buf;
    }
}

struct TokenCapacityRecord {
    std::size_t example = 0;
    std::size_t position = 0;
    std::uint32_t token_id = 0;
    std::string token;
    double importance = 0.0;   // word-mask probability p_i
    double capacity = 0.0;
    bool important = false;
    std::size_t occurrences = 1;
};

struct CapacityReport {
    double mean_all = 0.0;
    double mean_important = 0.0;
    double mean_rest = 0.0;
    std::size_t n_important = 0;
    std::size_t n_rest = 0;
    bool per_type = false;
    LayerTag layer = LayerTag::fc1;
    std::vector<TokenCapacityRecord> records;   // per occurrence, or per vocabulary type when per_type
};

/// Splits token occurrences (or vocabulary types) into the top `important_fraction`
/// by word-mask probability and the rest, and averages capacity at `layer` in each group.
template <class S>
[[nodiscard]] CapacityReport capacity_report(const Model<S>& model, const DatasetSplit& split, double important_fraction = 0.30,
                                             LayerTag layer = LayerTag::fc1, bool per_type = false) {
    if (!(important_fraction > 0.0 && important_fraction < 1.0)) {
        throw InvalidInput("important_fraction must be in (0, 1); both groups need members");
    }
    if (!model.config().use_vmask) throw InvalidInput("capacity_report needs a model with a word mask");
    if (split.examples.empty()) throw InvalidInput("capacity_report: empty split");
    std::vector<TokenCapacityRecord> occ;
    for (std::size_t e = 0; e < split.size(); ++e) {
        const auto& ex = split.examples[e];
        const auto tr = model.forward(ex);
        const VectorD cap = capacity(representation(tr, layer));
        for (std::size_t i = 0; i < ex.length(); ++i) {
            occ.push_back({e, i, ex.token_ids[i], ex.tokens[i], static_cast<double>(tr.mask_probs(static_cast<Eigen::Index>(i))),
                           cap(static_cast<Eigen::Index>(i)), false, 1});
        }
    }
    CapacityReport rep;
    rep.per_type = per_type;
    rep.layer = layer;
    if (per_type) {
        std::map<std::uint32_t, std::size_t> slot;
        std::vector<std::size_t> counts;
        for (const auto& r : occ) {
            auto [it, fresh] = slot.emplace(r.token_id, rep.records.size());
            if (fresh) {
                rep.records.push_back({0, 0, r.token_id, r.token, 0.0, 0.0, false, 0});
                counts.push_back(0);
            }
            auto& agg = rep.records[it->second];
            agg.importance += r.importance;
            agg.capacity += r.capacity;
            ++counts[it->second];
        }
        for (std::size_t i = 0; i < rep.records.size(); ++i) {
            rep.records[i].importance /= static_cast<double>(counts[i]);
            rep.records[i].capacity /= static_cast<double>(counts[i]);
            rep.records[i].occurrences = counts[i];
        }
    } else {
        rep.records = std::move(occ);
    }
    const auto n = rep.records.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rep.records[a].importance > rep.records[b].importance; });
    const auto n_imp = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(important_fraction * static_cast<double>(n))));
    if (n_imp >= n) throw InvalidInput("capacity_report: too few tokens to form both groups");
    double sum_imp = 0.0;
    double sum_rest = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        auto& rec = rep.records[order[r]];
        rec.important = r < n_imp;
        (rec.important ? sum_imp : sum_rest) += rec.capacity;
    }
    rep.n_important = n_imp;
    rep.n_rest = n - n_imp;
    rep.mean_important = sum_imp / static_cast<double>(rep.n_important);
    rep.mean_rest = sum_rest / static_cast<double>(rep.n_rest);
    rep.mean_all = (sum_imp + sum_rest) / static_cast<double>(n);
    return rep;
}

inline void write_capacity_report_tsv(const std::string& path, const CapacityReport& rep) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    char buf[256];
    out << "group\tcount\tmean_capacity\n";
    std::snprintf(buf, sizeof buf, "all\t%zu\t%.6f\nimportant\t%zu\t%.6f\nrest\t%zu\t%.6f\n", rep.n_important + rep.n_rest, rep.mean_all,
                  rep.n_important, rep.mean_important, rep.n_rest, rep.mean_rest);
    out << buf;
}

inline void write_capacity_tokens_tsv(const std::string& path, const CapacityReport& rep) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << (rep.per_type ? "token\toccurrences\timportance\tcapacity\timportant\n" : "example\tposition\ttoken\timportance\tcapacity\timportant\n");
    char buf[128];
    for (const auto& r : rep.records) {
        if (rep.per_type) {
            out << r.token << '\t' << r.occurrences;
        } else {
            out << r.example << '\t' << r.position << '\t' << r.token;
        }
        std::snprintf(buf, sizeof buf, "\t%.6f\t%.6f\t%d\n", r.importance, r.capacity, r.important ? 1 : 0);
        out << buf;
    }
}

} // namespace safr
