#pragma once

// Command-line front end: `safr <subcommand> [--config FILE] [--key value ...]`.
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include "safr/checkpoint.hpp"
#include "safr/config.hpp"
#include "safr/dataset_io.hpp"
#include "safr/eval.hpp"
#include "safr/sweep.hpp"
#include "safr/train.hpp"
#include "safr/viz.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace safr::cli {

/// Raised for bad arguments detected after parsing; maps to exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Context {
    std::string command;
    RunConfig cfg;
    std::ostream& log;
    std::vector<std::string> artifacts;
    std::vector<std::string> notes;   // extra "# key=value" manifest lines

    [[nodiscard]] std::filesystem::path out_dir() const { return cfg.out_dir(); }

    std::string artifact(const std::string& name) {
        std::filesystem::create_directories(out_dir());
        auto p = (out_dir() / name).string();
        artifacts.push_back(p);
        return p;
    }

    void write_manifest() const {
        std::filesystem::create_directories(out_dir());
        std::ofstream out(out_dir() / (command + ".manifest"));
        if (!out) throw std::runtime_error("cannot write manifest in " + out_dir().string());
        out << "# safr " << command << " manifest; reload with --config\n";
        out << cfg.to_text();
        for (const auto& n : notes) out << "# " << n << "\n";
        for (const auto& a : artifacts) out << "# artifact=" << a << "\n";
    }
};

namespace detail {

inline std::string flag_name(const std::string& key) {
    std::string f = key;
    for (auto& c : f) {
        if (c == '_') c = '-';
    }
    return "--" + f;
}

// Short spellings accepted alongside the canonical flag.
inline std::string alias_of(const std::string& key) {
    if (key == "train_tsv") return ",--train";
    if (key == "dev_tsv") return ",--dev";
    if (key == "test_tsv") return ",--test";
    if (key == "out_dir") return ",--out";
    return "";
}

inline const std::string& require(const Context& ctx, const std::string& key) {
    const auto& v = ctx.cfg.str(key);
    if (v.empty()) throw UsageError(ctx.command + ": " + flag_name(key) + " is required");
    return v;
}

inline Dataset load_dataset_for(Context& ctx) {
    const auto ds = load_dataset(require(ctx, "dataset"));
    ctx.notes.push_back("dataset_hash=" + hex64(dataset_hash(ds)));
    ctx.notes.push_back("vocab_hash=" + hex64(ds.vocab.hash()));
    return ds;
}

inline Checkpoint load_checkpoint_for(Context& ctx, const Dataset& ds) {
    auto ck = load_checkpoint(require(ctx, "ckpt"));
    if (!(ck.vocab == ds.vocab)) throw std::runtime_error("checkpoint vocabulary does not match the dataset");
    ctx.notes.push_back("checkpoint_seed=" + std::to_string(ck.seed));
    return ck;
}

inline LayerTag layer_of(const Context& ctx) {
    try {
        return parse_layer_tag(ctx.cfg.str("layer"));
    } catch (const InvalidInput& e) {
        throw UsageError(e.what());
    }
}

inline std::vector<SweepCell> grid_of(const Context& ctx) {
    const auto& g = ctx.cfg.str("grid");
    if (g == "ablation" || g == "cartesian") return preset_grid(g);
    std::vector<SweepCell> cells;
    std::stringstream ss(g);
    std::string item;
    while (std::getline(ss, item, ',')) cells.push_back(parse_cell(item));
    if (cells.empty()) throw UsageError("sweep: empty grid");
    return cells;
}

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

} // namespace detail

inline void run_ingest(Context& ctx) {
    const auto opt = ctx.cfg.ingest_options();
    const auto train = load_tsv(detail::require(ctx, "train_tsv"), static_cast<int>(opt.num_classes));
    const auto test = load_tsv(detail::require(ctx, "test_tsv"), static_cast<int>(opt.num_classes));
    std::vector<RawExample> dev;
    if (!ctx.cfg.str("dev_tsv").empty()) dev = load_tsv(ctx.cfg.str("dev_tsv"), static_cast<int>(opt.num_classes));
    IngestReport reports[3];
    const auto ds = ingest(train, dev, test, opt, &reports);
    std::string path = ctx.cfg.str("dataset");
    if (path.empty()) {
        path = ctx.artifact("dataset.bin");
    } else {
        ctx.artifacts.push_back(path);
    }
    save_dataset(path, ds);
    const auto summary = dataset_manifest(ds, reports);
    std::ofstream(ctx.artifact("dataset_summary.txt")) << summary;
    ctx.notes.push_back("dataset_hash=" + hex64(dataset_hash(ds)));
    ctx.log << summary;
}

inline void run_train(Context& ctx) {
    const auto ds = detail::load_dataset_for(ctx);
    const auto mc = ctx.cfg.model_config();
    const auto tc = ctx.cfg.train_config();
    const std::string ckpt = ctx.cfg.str("ckpt").empty() ? ctx.artifact("model.ck") : ctx.cfg.str("ckpt");
    if (!ctx.cfg.str("ckpt").empty()) ctx.artifacts.push_back(ckpt);
    const auto log_path = ctx.artifact("train_log.tsv");
    ctx.write_manifest();
    auto result = train(mc, tc, ds, [&](const StepRecord& s) {
        if (s.dev_accuracy) {
            ctx.log << "epoch " << s.epoch << " step " << s.step << " loss " << detail::fmt("%.4f", s.loss.total) << " dev_acc "
                    << detail::fmt("%.4f", *s.dev_accuracy) << "\n";
        }
    });
    save_checkpoint(ckpt, result.checkpoint);
    write_training_log(log_path, result.history);
    ctx.notes.push_back("best_epoch=" + std::to_string(result.history.best_epoch));
    ctx.notes.push_back("best_dev_accuracy=" + detail::fmt("%.17g", result.checkpoint.dev_accuracy));
    ctx.log << "best dev accuracy " << detail::fmt("%.4f", result.checkpoint.dev_accuracy) << " at epoch " << result.history.best_epoch
            << "; checkpoint " << ckpt << "\n";
}

inline void run_eval(Context& ctx) {
    const auto ds = detail::load_dataset_for(ctx);
    const auto ck = detail::load_checkpoint_for(ctx, ds);
    const auto& split = ds.split(ctx.cfg.str("split"));
    const double acc = accuracy(ck.model(), split);
    std::ofstream out(ctx.artifact("eval.tsv"));
    out << "split\tn\taccuracy\n" << split.name << '\t' << split.size() << '\t' << detail::fmt("%.6f", acc) << "\n";
    ctx.log << split.name << " accuracy " << detail::fmt("%.4f", acc) << " (" << split.size() << " examples)\n";
}

inline void run_srs(Context& ctx) {
    const auto ds = detail::load_dataset_for(ctx);
    const auto ck = detail::load_checkpoint_for(ctx, ds);
    const auto model = ck.model();
    const auto r = srs(model, ds.split(ctx.cfg.str("split")), ctx.cfg.real("k"), detail::layer_of(ctx), ctx.cfg.random_seeds());
    write_srs_tsv(ctx.artifact("srs.tsv"), {r});
    ctx.log << "k=" << r.k << " acc_s " << detail::fmt("%.2f", r.acc_original) << " acc_r " << detail::fmt("%.2f", r.acc_random) << " acc_k "
            << detail::fmt("%.2f", r.acc_capacity) << " srs " << detail::fmt("%.2f", r.srs) << "\n";
}

inline void run_sensitivity(Context& ctx) {
    const auto ds = detail::load_dataset_for(ctx);
    const auto ck = detail::load_checkpoint_for(ctx, ds);
    const auto model = ck.model();
    const auto rows = sensitivity_curve(model, ds.split(ctx.cfg.str("split")), ctx.cfg.reals("ks"), detail::layer_of(ctx), ctx.cfg.random_seeds());
    write_srs_tsv(ctx.artifact("sensitivity.tsv"), rows);
    for (const auto& r : rows) ctx.log << "k=" << r.k << " acc_k " << detail::fmt("%.2f", r.acc_capacity) << " srs " << detail::fmt("%.2f", r.srs) << "\n";
}

inline void run_sweep_cmd(Context& ctx) {
    const auto ds = detail::load_dataset_for(ctx);
    const auto cells = detail::grid_of(ctx);
    SweepOptions opt;
    opt.k = ctx.cfg.real("k");
    opt.layer = detail::layer_of(ctx);
    opt.random_seeds = ctx.cfg.random_seeds();
    opt.eval_split = ctx.cfg.str("split");
    const auto path = ctx.artifact("sweep.tsv");
    ctx.write_manifest();
    const auto name = std::filesystem::path(ctx.cfg.str("dataset")).stem().string();
    const auto rows = run_sweep(ctx.cfg.model_config(), ctx.cfg.train_config(), ds, cells, opt, [&](const SweepRow& r) {
        ctx.log << r.cell.label() << ": "
                << (r.ok ? "srs " + detail::fmt("%.2f", r.report.srs) + " acc_s " + detail::fmt("%.2f", r.report.acc_original) : "failed: " + r.error)
                << "\n";
    });
    write_sweep_tsv(path, rows, name);
}

inline void run_capacity_report(Context& ctx) {
    const auto ds = detail::load_dataset_for(ctx);
    const auto ck = detail::load_checkpoint_for(ctx, ds);
    const auto model = ck.model();
    const auto rep = capacity_report(model, ds.split(ctx.cfg.str("split")), ctx.cfg.real("important_fraction"), detail::layer_of(ctx),
                                     ctx.cfg.flag("per_type"));
    write_capacity_report_tsv(ctx.artifact("capacity_report.tsv"), rep);
    write_capacity_tokens_tsv(ctx.artifact("capacity_tokens.tsv"), rep);
    ctx.log << "all " << detail::fmt("%.4f", rep.mean_all) << " important " << detail::fmt("%.4f", rep.mean_important) << " rest "
            << detail::fmt("%.4f", rep.mean_rest) << "\n";
}

inline void run_viz(Context& ctx) {
    const auto ds = detail::load_dataset_for(ctx);
    const auto ck = detail::load_checkpoint_for(ctx, ds);
    const auto model = ck.model();
    const auto& split = ds.split(ctx.cfg.str("split"));
    const auto index = ctx.cfg.natural("example");
    if (index >= split.size()) throw UsageError("viz: --example out of range for split '" + split.name + "'");
    const auto& ex = split.examples[index];
    const auto id = split.name + "_" + std::to_string(index);
    const auto v = make_viz_trace(model.forward(ex), ex.tokens, id);
    const auto layer = detail::layer_of(ctx);
    const auto lname = std::string(to_string(layer));
    VizOptions opt;
    opt.edge_threshold = ctx.cfg.real("edge_threshold");
    opt.layout_seed = derive_seed(ctx.cfg.natural("seed"), "layout");
    emit_capacity_barchart(v, layer, ctx.artifact(id + "_" + lname + "_barchart.svg"));
    emit_interference_heatmap(v, layer, ctx.artifact(id + "_" + lname + "_heatmap.svg"));
    emit_token_graph(v, layer, ctx.artifact(id + "_" + lname + "_graph.svg"), opt);
    if (model.config().use_vmask) {
        for (const auto& p : emit_cross_layer(v, (ctx.out_dir() / "cross_layer").string())) ctx.artifacts.push_back(p);
    }
    ctx.log << "wrote " << ctx.artifacts.size() << " figures for " << id << "\n";
}

inline void run_grad_check(Context& ctx) {
    auto mc = ctx.cfg.model_config();
    mc.dropout = 0.0;
    TokenizedExample ex;
    if (ctx.cfg.str("dataset").empty()) {
        // Synthetic five-token example over a small vocabulary.
        mc.vocab_size = 32;
        Rng rng(derive_seed(ctx.cfg.natural("seed"), "gradcheck-example"));
        for (int i = 0; i < 5; ++i) {
            const auto id = static_cast<std::uint32_t>(2 + rng.below(mc.vocab_size - 2));
            ex.token_ids.push_back(id);
            ex.tokens.push_back("t" + std::to_string(id));
        }
        ex.label = static_cast<int>(rng.below(mc.num_classes));
    } else {
        const auto ds = detail::load_dataset_for(ctx);
        mc.vocab_size = ds.vocab.size();
        mc.num_classes = ds.num_classes;
        mc.max_len = ds.max_len;
        const auto& split = ds.split(ctx.cfg.str("split"));
        const auto index = ctx.cfg.natural("example");
        if (index >= split.size()) throw UsageError("grad-check: --example out of range");
        ex = split.examples[index];
    }
    mc.validate();
    GradCheckOptions opt;
    opt.step_size = ctx.cfg.real("step_size");
    opt.samples_per_tensor = ctx.cfg.natural("samples");
    opt.seed = ctx.cfg.natural("seed");
    const auto tc = ctx.cfg.train_config();
    const auto rep = grad_check(Model<double>::initialized(mc), ex, tc.weights(), opt);
    std::ofstream out(ctx.artifact("grad_check.tsv"));
    out << "tensor\tmax_rel_error\n";
    for (const auto& [name, err] : rep.per_tensor) out << name << '\t' << detail::fmt("%.6e", err) << "\n";
    ctx.notes.push_back("max_relative_error=" + detail::fmt("%.6e", rep.max_relative_error));
    ctx.log << "max relative error " << detail::fmt("%.3e", rep.max_relative_error) << " (" << rep.worst_tensor << ", "
            << rep.entries_compared << " of " << rep.entries_checked << " entries compared)\n";
}

struct Command {
    std::string name;
    std::string help;
    std::vector<std::string> keys;
    std::function<void(Context&)> run;
};

[[nodiscard]] inline std::vector<Command> commands() {
    const std::vector<std::string> common = {"preset", "seed", "out_dir"};
    const std::vector<std::string> model = {"embed_dim", "ffn_dim", "heads", "dropout", "use_vmask", "vmask_temperature"};
    const std::vector<std::string> train_keys = {"lambda_imp", "lambda_inter", "vmask_info", "epochs", "batch_size", "lr",
                                                 "beta1",      "beta2",        "adam_eps",   "clip_norm", "patience",  "eval_every"};
    auto join = [](std::initializer_list<std::vector<std::string>> parts) {
        std::vector<std::string> out;
        for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
        return out;
    };
    return {
        {"ingest", "tokenize TSV splits, build the vocabulary and write a dataset cache",
         join({common, {"train_tsv", "dev_tsv", "test_tsv", "dataset", "min_freq", "max_len", "num_classes", "dev_fraction"}}), run_ingest},
        {"train", "train one model and save the best-dev checkpoint", join({common, {"dataset", "ckpt"}, model, train_keys}), run_train},
        {"eval", "accuracy of a checkpoint on a split", join({common, {"dataset", "ckpt", "split"}}), run_eval},
        {"srs", "capacity-ranked vs random token deletion at one k",
         join({common, {"dataset", "ckpt", "split", "k", "layer", "random_draws"}}), run_srs},
        {"sensitivity", "deletion accuracy over a list of k values",
         join({common, {"dataset", "ckpt", "split", "ks", "layer", "random_draws"}}), run_sensitivity},
        {"sweep", "train and score one model per regularizer-weight cell",
         join({common, {"dataset", "grid", "split", "k", "layer", "random_draws"}, model, train_keys}), run_sweep_cmd},
        {"capacity-report", "mean capacity of important vs remaining tokens",
         join({common, {"dataset", "ckpt", "split", "important_fraction", "per_type", "layer"}}), run_capacity_report},
        {"viz", "SVG figures for one example", join({common, {"dataset", "ckpt", "split", "example", "layer", "edge_threshold"}}), run_viz},
        {"grad-check", "finite-difference check of the analytic gradient (double precision, no dropout)",
         join({common, {"dataset", "split", "example", "num_classes", "max_len", "step_size", "samples", "lambda_imp", "lambda_inter", "vmask_info"},
               model}),
         run_grad_check},
    };
}

[[nodiscard]] inline std::string default_of(const std::string& key) {
    for (const auto& k : config_keys()) {
        if (k.name == key) return k.default_value;
    }
    return "";
}

[[nodiscard]] inline std::string help_of(const std::string& key) {
    for (const auto& k : config_keys()) {
        if (k.name == key) return k.help;
    }
    return "";
}

/// Parses argv and runs the chosen subcommand.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"SAFR workbench: superposition-aware regularization for a one-layer transformer classifier", "safr"};
    app.require_subcommand(1);
    app.fallthrough(false);
    const auto cmds = commands();
    std::map<std::string, std::map<std::string, std::string>> given;
    std::map<std::string, std::string> config_path;
    std::map<std::string, CLI::App*> subs;
    for (const auto& c : cmds) {
        auto* sub = app.add_subcommand(c.name, c.help);
        subs[c.name] = sub;
        sub->add_option("--config", config_path[c.name], "key=value config file; flags override its values");
        auto& slots = given[c.name];
        for (const auto& key : c.keys) {
            const auto def = default_of(key);
            auto help = help_of(key);
            if (help.find("(default") == std::string::npos) help += " (default: " + (def.empty() ? "none" : def) + ")";
            sub->add_option(detail::flag_name(key) + detail::alias_of(key), slots[key], help);
        }
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e, out, err);
        err << "error: " << e.what() << "\n\n" << app.help();
        return 1;
    }

    const Command* chosen = nullptr;
    for (const auto& c : cmds) {
        if (subs[c.name]->parsed()) chosen = &c;
    }
    if (chosen == nullptr) {
        err << app.help();
        return 1;
    }

    Context ctx{chosen->name, RunConfig::defaults(), err, {}, {}};
    try {
        if (!config_path[chosen->name].empty()) load_config_file(ctx.cfg, config_path[chosen->name]);
        auto* sub = subs[chosen->name];
        const auto& slots = given[chosen->name];
        if (sub->count("--preset") > 0) ctx.cfg.set("preset", slots.at("preset"));
        for (const auto& key : chosen->keys) {
            if (key != "preset" && sub->count(detail::flag_name(key)) > 0) ctx.cfg.set(key, slots.at(key));
        }
        // Surface malformed values before any work starts.
        (void)ctx.cfg.model_config();
        ctx.cfg.train_config().validate();
        (void)ctx.cfg.ingest_options();
        (void)ctx.cfg.random_seeds();
        (void)detail::layer_of(ctx);
        if (ctx.cfg.str("out_dir").empty()) ctx.cfg.set("out_dir", ctx.cfg.out_dir());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }

    try {
        ctx.write_manifest();
        chosen->run(ctx);
        ctx.write_manifest();
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << chosen->name << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}

} // namespace safr::cli
