// Criteria that need the SST-2 splits. Set SAFR_SST2_DIR to a directory holding
// train.tsv, dev.tsv and test.tsv (label<TAB>text). Without it every criterion
// is reported as SKIP and the process exits with 77.

#include "safr/safr.hpp"

#include "support/oracles.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

using namespace safr;

namespace {

constexpr int kSkip = 77;
constexpr double kModelBudgetSeconds = 30.0 * 60.0;

struct TrainedModel {
    Model<float> model;
    double seconds = 0.0;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

TrainedModel fit(const RunConfig& cfg, const Dataset& ds, bool use_vmask, double lambda_imp, double lambda_inter, std::uint64_t seed) {
    auto mc = cfg.model_config();
    mc.use_vmask = use_vmask;
    mc.seed = seed;
    auto tc = cfg.train_config();
    tc.lambda_imp = lambda_imp;
    tc.lambda_inter = lambda_inter;
    tc.seed = seed;
    const auto start = std::chrono::steady_clock::now();
    auto result = train(mc, tc, ds);
    return {result.checkpoint.model(), seconds_since(start)};
}

void report(bool pass, int id, const std::string& text) {
    std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", id, text.c_str());
    std::fflush(stdout);
}

} // namespace

int main() {
    const char* root = std::getenv("SAFR_SST2_DIR");
    const std::string dir = root == nullptr ? "" : root;
    if (dir.empty() || !std::filesystem::exists(dir + "/train.tsv") || !std::filesystem::exists(dir + "/test.tsv")) {
        for (int id : {6, 7, 8}) std::printf("SKIP criterion %d: SST-2 splits not available (set SAFR_SST2_DIR)\n", id);
        return kSkip;
    }

    auto cfg = RunConfig::defaults();
    cfg.set("preset", "sst2");
    const auto io = cfg.ingest_options();
    const bool has_dev = std::filesystem::exists(dir + "/dev.tsv");
    const auto ds = ingest(load_tsv(dir + "/train.tsv"), has_dev ? load_tsv(dir + "/dev.tsv") : std::vector<RawExample>{}, load_tsv(dir + "/test.tsv"), io);
    std::printf("SST-2: %zu train / %zu dev / %zu test, vocabulary %zu\n", ds.train.size(), ds.dev.size(), ds.test.size(), ds.vocab.size());

    const std::vector<std::uint64_t> seeds = {0, 1, 2};
    const auto random_seeds = cfg.random_seeds();
    std::vector<SrsReport> base, vmask_only, safr_srs;
    std::vector<TrainedModel> base_models, safr_models;
    double slowest = 0.0;
    for (auto seed : seeds) {
        auto b = fit(cfg, ds, false, 0.0, 0.0, seed);
        auto v = fit(cfg, ds, true, 0.0, 0.0, seed);
        auto s = fit(cfg, ds, true, 0.1, 0.1, seed);
        slowest = std::max({slowest, b.seconds, v.seconds, s.seconds});
        base.push_back(srs(b.model, ds.test, 30, LayerTag::fc1, random_seeds));
        vmask_only.push_back(srs(v.model, ds.test, 30, LayerTag::fc1, random_seeds));
        safr_srs.push_back(srs(s.model, ds.test, 30, LayerTag::fc1, random_seeds));
        std::printf("seed %llu: SRS(30) baseline %.2f, vmask-only %.2f, SAFR %.2f; Acc_S baseline %.2f, SAFR %.2f\n",
                    static_cast<unsigned long long>(seed), base.back().srs, vmask_only.back().srs, safr_srs.back().srs,
                    base.back().acc_original, safr_srs.back().acc_original);
        base_models.push_back(std::move(b));
        safr_models.push_back(std::move(s));
    }
    int failures = 0;
    auto mean_srs = [](const std::vector<SrsReport>& rs) {
        double s = 0.0;
        for (const auto& r : rs) s += r.srs;
        return s / static_cast<double>(rs.size());
    };

    {
        const bool a = safr_srs[0].srs >= base[0].srs + 5.0;
        const bool b = std::abs(safr_srs[0].acc_original - base[0].acc_original) <= 6.0;
        const double mb = mean_srs(base), mv = mean_srs(vmask_only), ms = mean_srs(safr_srs);
        const bool c = mb - 3.0 < mv && mv < ms + 3.0;
        const bool budget = slowest <= kModelBudgetSeconds;
        char buf[512];
        std::snprintf(buf, sizeof buf,
                      "SRS gap %.2f (>= 5: %s), accuracy gap %.2f (<= 6: %s), mean SRS baseline %.2f < vmask-only %.2f < SAFR %.2f with 3-point slack (%s), "
                      "slowest model %.0fs",
                      safr_srs[0].srs - base[0].srs, a ? "yes" : "no", std::abs(safr_srs[0].acc_original - base[0].acc_original), b ? "yes" : "no", mb,
                      mv, ms, c ? "yes" : "no", slowest);
        report(a && b && c && budget, 6, buf);
        failures += a && b && c && budget ? 0 : 1;
    }

    {
        const auto start = std::chrono::steady_clock::now();
        std::vector<double> ks = {10, 20, 30, 40, 50, 60, 70};
        const auto safr_curve = sensitivity_curve(safr_models[0].model, ds.test, ks, LayerTag::fc1, random_seeds);
        const auto base_curve = sensitivity_curve(base_models[0].model, ds.test, ks, LayerTag::fc1, random_seeds);
        std::vector<double> acc;
        int below = 0;
        for (std::size_t i = 0; i < ks.size(); ++i) {
            acc.push_back(safr_curve[i].acc_capacity);
            below += safr_curve[i].acc_capacity <= base_curve[i].acc_capacity ? 1 : 0;
        }
        const double rho = safr::oracle::spearman(ks, acc);
        const double secs = seconds_since(start);
        const bool ok = rho <= -0.8 && below >= 5 && secs < 600.0;
        char buf[256];
        std::snprintf(buf, sizeof buf, "Spearman(k, Acc) = %.3f (<= -0.8), SAFR at or below baseline at %d/7 points (>= 5), %.0fs", rho, below, secs);
        report(ok, 7, buf);
        failures += ok ? 0 : 1;
    }

    {
        const auto rep = capacity_report(safr_models[0].model, ds.test, 0.30, LayerTag::fc1);
        const double factor = rep.mean_important / rep.mean_rest;
        const bool between = rep.mean_all >= std::min(rep.mean_important, rep.mean_rest) && rep.mean_all <= std::max(rep.mean_important, rep.mean_rest);
        const bool ok = factor >= 1.5 && between;
        char buf[256];
        std::snprintf(buf, sizeof buf, "important %.4f / rest %.4f = %.2f (>= 1.5), all %.4f between groups: %s", rep.mean_important, rep.mean_rest,
                      factor, rep.mean_all, between ? "yes" : "no");
        report(ok, 8, buf);
        failures += ok ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
