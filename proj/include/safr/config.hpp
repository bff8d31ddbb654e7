#pragma once

// Flat key=value run configuration. Every key has a default; a config file and
// command-line flags override it in that order, and unknown keys are rejected.

#include "safr/common.hpp"
#include "safr/dataset_io.hpp"
#include "safr/model.hpp"
#include "safr/train.hpp"

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace safr {

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string help;
};

[[nodiscard]] inline const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"preset", "", "dataset preset: sst2 or imdb (sets min_freq, max_len, batch_size)"},
        {"seed", "0", "master seed; model init, shuffling, mask noise, deletion and layout derive from it"},
        {"out_dir", "", "output directory (default: $SAFR_OUT_DIR, else ./safr_out)"},
        {"train_tsv", "", "training TSV (label<TAB>text)"},
        {"dev_tsv", "", "dev TSV; empty means a seeded holdout of train"},
        {"test_tsv", "", "test TSV"},
        {"dataset", "", "dataset cache file"},
        {"min_freq", "2", "minimum training-set count for a vocabulary entry"},
        {"max_len", "64", "maximum tokens per example (longer inputs keep their first max_len tokens)"},
        {"num_classes", "2", "number of labels"},
        {"dev_fraction", "0.2", "holdout fraction when no dev TSV is given"},
        {"embed_dim", "256", "embedding width"},
        {"ffn_dim", "1024", "feed-forward inner width"},
        {"heads", "4", "attention heads"},
        {"dropout", "0.1", "dropout on attention weights and feed-forward output"},
        {"use_vmask", "1", "1 = word-mask model, 0 = plain baseline"},
        {"vmask_temperature", "0.5", "binary-concrete temperature for mask samples"},
        {"lambda_imp", "0", "importance regularizer weight"},
        {"lambda_inter", "0", "interaction regularizer weight"},
        {"vmask_info", "0", "weight of the optional mask KL term"},
        {"epochs", "10", "training epochs"},
        {"batch_size", "64", "minibatch size"},
        {"lr", "0.001", "Adam learning rate"},
        {"beta1", "0.9", "Adam first-moment decay"},
        {"beta2", "0.999", "Adam second-moment decay"},
        {"adam_eps", "1e-08", "Adam epsilon"},
        {"clip_norm", "1", "global gradient-norm clip; 0 disables"},
        {"patience", "3", "dev evaluations without improvement before stopping; 0 disables"},
        {"eval_every", "0", "steps between dev evaluations; 0 = once per epoch"},
        {"ckpt", "", "checkpoint file"},
        {"split", "test", "evaluation split: train, dev or test"},
        {"k", "30", "percent of tokens deleted"},
        {"ks", "10,20,30,40,50,60,70", "comma-separated k values for the sensitivity curve"},
        {"layer", "fc1", "ranking / analysis layer: embedding, vmask, attention_out, fc1, fc2"},
        {"random_draws", "5", "random-deletion draws averaged for the baseline"},
        {"important_fraction", "0.3", "share of tokens (by mask probability) forming the important group"},
        {"per_type", "0", "1 = group vocabulary types instead of token occurrences"},
        {"grid", "ablation", "sweep cells: preset name (ablation, cartesian) or comma-separated 'baseline' / 'imp:inter' cells"},
        {"example", "0", "example index within the split"},
        {"edge_threshold", "0.3", "minimum |cosine| for a token-graph edge"},
        {"step_size", "1e-05", "finite-difference step"},
        {"samples", "64", "sampled entries per large tensor"},
    };
    return keys;
}

struct RunConfig {
    std::map<std::string, std::string> values;

    static RunConfig defaults() {
        RunConfig c;
        for (const auto& k : config_keys()) c.values[k.name] = k.default_value;
        return c;
    }

    [[nodiscard]] static bool known(const std::string& key) {
        for (const auto& k : config_keys()) {
            if (k.name == key) return true;
        }
        return false;
    }

    void set(const std::string& key, const std::string& value) {
        if (!known(key)) throw InvalidInput("unknown config key '" + key + "'");
        values[key] = value;
        if (key == "preset") apply_preset(value);
    }

    /// Preset values act as defaults; they are applied when the preset key is set,
    /// so anything set afterwards still wins.
    void apply_preset(const std::string& name) {
        if (name.empty()) return;
        if (name == "sst2") {
            values["min_freq"] = "2";
            values["max_len"] = "64";
            values["batch_size"] = "64";
        } else if (name == "imdb") {
            values["min_freq"] = "5";
            values["max_len"] = "256";
            values["batch_size"] = "32";
        } else {
            throw InvalidInput("unknown preset '" + name + "' (expected sst2 or imdb)");
        }
    }

    [[nodiscard]] const std::string& str(const std::string& key) const {
        auto it = values.find(key);
        if (it == values.end()) throw InvalidInput("unknown config key '" + key + "'");
        return it->second;
    }

    [[nodiscard]] double real(const std::string& key) const {
        const auto& s = str(key);
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used == s.size()) return v;
        } catch (const std::logic_error&) {
        }
        throw InvalidInput("config key '" + key + "' expects a number, got '" + s + "'");
    }

    [[nodiscard]] std::uint64_t natural(const std::string& key) const {
        const auto& s = str(key);
        if (!s.empty() && s.find_first_not_of("0123456789") == std::string::npos) {
            try {
                return std::stoull(s);
            } catch (const std::logic_error&) {
            }
        }
        throw InvalidInput("config key '" + key + "' expects a non-negative integer, got '" + s + "'");
    }

    [[nodiscard]] bool flag(const std::string& key) const {
        const auto& s = str(key);
        if (s == "1" || s == "true") return true;
        if (s == "0" || s == "false") return false;
        throw InvalidInput("config key '" + key + "' expects 0 or 1, got '" + s + "'");
    }

    [[nodiscard]] std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        std::stringstream ss(str(key));
        std::string item;
        while (std::getline(ss, item, ',')) {
            RunConfig tmp;
            tmp.values["item"] = item;
            try {
                out.push_back(tmp.real("item"));
            } catch (const InvalidInput&) {
                throw InvalidInput("config key '" + key + "' expects comma-separated numbers, got '" + str(key) + "'");
            }
        }
        return out;
    }

    [[nodiscard]] std::string out_dir() const {
        if (!str("out_dir").empty()) return str("out_dir");
        if (const char* env = std::getenv("SAFR_OUT_DIR"); env != nullptr && *env != '\0') return env;
        return "safr_out";
    }

    [[nodiscard]] ModelConfig model_config() const {
        ModelConfig m;
        m.embed_dim = natural("embed_dim");
        m.ffn_dim = natural("ffn_dim");
        m.heads = natural("heads");
        m.num_classes = natural("num_classes");
        m.max_len = natural("max_len");
        m.dropout = real("dropout");
        m.seed = natural("seed");
        m.use_vmask = flag("use_vmask");
        m.vmask_temperature = real("vmask_temperature");
        return m;
    }

    [[nodiscard]] TrainConfig train_config() const {
        TrainConfig t;
        t.lambda_imp = real("lambda_imp");
        t.lambda_inter = real("lambda_inter");
        t.vmask_info = real("vmask_info");
        t.epochs = natural("epochs");
        t.batch_size = natural("batch_size");
        t.lr = real("lr");
        t.beta1 = real("beta1");
        t.beta2 = real("beta2");
        t.adam_eps = real("adam_eps");
        t.clip_norm = real("clip_norm");
        t.seed = natural("seed");
        t.patience = natural("patience");
        t.eval_every = natural("eval_every");
        return t;
    }

    [[nodiscard]] IngestOptions ingest_options() const {
        IngestOptions o;
        o.min_freq = static_cast<std::uint32_t>(natural("min_freq"));
        o.max_len = static_cast<std::uint32_t>(natural("max_len"));
        o.num_classes = static_cast<std::uint32_t>(natural("num_classes"));
        o.seed = natural("seed");
        o.dev_fraction = real("dev_fraction");
        return o;
    }

    /// Deletion-baseline seeds, one per random draw, derived from the master seed.
    [[nodiscard]] std::vector<std::uint64_t> random_seeds() const {
        std::vector<std::uint64_t> out;
        for (std::uint64_t r = 0; r < natural("random_draws"); ++r) out.push_back(derive_seed(natural("seed"), "deletion", r));
        return out;
    }

    /// Serialized form: a valid config file. The preset key is written first so that
    /// reloading reproduces the same values.
    [[nodiscard]] std::string to_text() const {
        std::ostringstream out;
        out << "preset=" << str("preset") << "\n";
        for (const auto& k : config_keys()) {
            if (k.name != "preset") out << k.name << "=" << str(k.name) << "\n";
        }
        return out.str();
    }
};

/// Applies `key=value` lines from a config stream. Blank lines and lines starting
/// with '#' are ignored; the preset key is applied before the others.
inline void apply_config_text(RunConfig& cfg, std::istream& in, const std::string& source = "<config>") {
    std::vector<std::pair<std::string, std::string>> entries;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto first = line.find_first_not_of(" \t");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(source + ":" + std::to_string(lineno) + ": expected key=value");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const auto key = trim(line.substr(0, eq));
        if (!RunConfig::known(key)) throw ParseError(source + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
        entries.emplace_back(key, trim(line.substr(eq + 1)));
    }
    for (const auto& [k, v] : entries) {
        if (k == "preset") cfg.set(k, v);
    }
    for (const auto& [k, v] : entries) {
        if (k != "preset") cfg.set(k, v);
    }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open config " + path);
    apply_config_text(cfg, in, path);
}

} // namespace safr
