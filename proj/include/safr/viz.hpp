#pragma once

// Self-contained SVG figures for a single traced example: capacity bar charts,
// interference heatmaps, and a force-directed token graph. Output depends only on
// the inputs and the layout seed; numbers are printed with fixed precision.

#include "safr/eval.hpp"
#include "safr/model.hpp"
#include "safr/repr_metrics.hpp"
#include "safr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace safr {

/// Double-precision copy of the parts of a trace the figures need, cut to the
/// valid prefix.
struct VizTrace {
    std::string example_id = "example";
    std::vector<std::string> tokens;
    std::map<LayerTag, MatrixD> layers;
    VectorD mask_probs;
    MatrixD mean_attention;   // head average, rows renormalized to sum 1

    [[nodiscard]] std::size_t length() const { return tokens.size(); }

    [[nodiscard]] RepresentationMatrix layer(LayerTag tag) const {
        auto it = layers.find(tag);
        if (it == layers.end()) throw InvalidInput("trace has no layer '" + std::string(to_string(tag)) + "'");
        return RepresentationMatrix(tag, it->second, it->second.rows());
    }
};

[[nodiscard]] inline MatrixD mean_attention_rows(const std::vector<MatrixD>& heads, std::size_t valid_len) {
    if (heads.empty()) throw InvalidInput("mean_attention_rows: no heads");
    const auto t = static_cast<Eigen::Index>(valid_len);
    MatrixD mean = MatrixD::Zero(t, t);
    for (const auto& a : heads) mean += a.topLeftCorner(t, t);
    mean /= static_cast<double>(heads.size());
    for (Eigen::Index r = 0; r < t; ++r) {
        const double s = mean.row(r).sum();
        if (s > 0.0) mean.row(r) /= s;
    }
    return mean;
}

template <class S>
[[nodiscard]] VizTrace make_viz_trace(const ForwardTrace<S>& tr, const std::vector<std::string>& tokens, std::string example_id = "example") {
    const auto t = static_cast<Eigen::Index>(tr.valid_len);
    if (tokens.size() != tr.valid_len) throw InvalidInput("make_viz_trace: one token string per valid position required");
    VizTrace v;
    v.example_id = std::move(example_id);
    v.tokens = tokens;
    for (auto tag : kAllLayers) v.layers[tag] = tr.layer(tag).topRows(t).template cast<double>();
    v.mask_probs = tr.mask_probs.head(t).transpose().template cast<double>();
    std::vector<MatrixD> heads;
    for (const auto& a : tr.attn_weights) heads.push_back(a.template cast<double>());
    v.mean_attention = mean_attention_rows(heads, tr.valid_len);
    return v;
}

struct VizOptions {
    double edge_threshold = 0.3;
    std::uint64_t layout_seed = 0;
    int layout_iterations = 200;
    double spring_length = 120.0;   // L0: spring rest length at |cos| = 0
    double max_radius = 24.0;       // circle radius at capacity 1
    double min_radius = 2.0;
};

namespace svg {

inline std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        case '\'': out += "&apos;"; break;
        default:
            if (static_cast<unsigned char>(c) >= 0x20 || c == '\t') out += c;
        }
    }
    return out;
}

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    if (std::string(buf) == "-0.00") return "0.00";
    return buf;
}

inline std::string rgb(int r, int g, int b) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

/// Diverging scale over [-1, 1]: blue for negative, white at 0, red for positive.
inline std::string diverging(double v) {
    v = std::clamp(v, -1.0, 1.0);
    const int tr = v >= 0 ? 178 : 33;
    const int tg = v >= 0 ? 24 : 102;
    const int tb = v >= 0 ? 43 : 172;
    const double a = std::abs(v);
    auto mix = [&](int target) { return static_cast<int>(std::lround(255.0 + a * (target - 255))); };
    return rgb(mix(tr), mix(tg), mix(tb));
}

inline std::string header(double w, double h) {
    return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" + num(w) +
           "\" height=\"" + num(h) + "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\" font-family=\"sans-serif\" font-size=\"11\">\n";
}

inline void text(std::string& out, double x, double y, const std::string& s, const std::string& extra = "") {
    out += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\"" + extra + ">" + escape(s) + "</text>\n";
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
    if (!out) throw std::runtime_error("write failed: " + path);
}

} // namespace svg

/// One bar per token; heights are values on a fixed [0, 1] axis (values are clamped).
[[nodiscard]] inline std::string render_barchart(const std::vector<std::string>& tokens, const VectorD& values, const std::string& title) {
    if (static_cast<std::size_t>(values.size()) != tokens.size()) throw InvalidInput("barchart: one value per token required");
    const double bar_w = 24.0, gap = 8.0, plot_h = 200.0, left = 40.0, top = 30.0, bottom = 90.0;
    const auto t = static_cast<double>(tokens.size());
    const double w = left + t * (bar_w + gap) + gap + 10.0;
    const double h = top + plot_h + bottom;
    std::string out = svg::header(w, h);
    svg::text(out, left, 18.0, title);
    out += "<line x1=\"" + svg::num(left) + "\" y1=\"" + svg::num(top) + "\" x2=\"" + svg::num(left) + "\" y2=\"" + svg::num(top + plot_h) +
           "\" stroke=\"#000000\"/>\n";
    out += "<line x1=\"" + svg::num(left) + "\" y1=\"" + svg::num(top + plot_h) + "\" x2=\"" + svg::num(w - 10.0) + "\" y2=\"" +
           svg::num(top + plot_h) + "\" stroke=\"#000000\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = tick / 4.0;
        svg::text(out, 4.0, top + plot_h - v * plot_h + 4.0, svg::num(v));
    }
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const double v = std::clamp(values(static_cast<Eigen::Index>(i)), 0.0, 1.0);
        const double x = left + gap + static_cast<double>(i) * (bar_w + gap);
        const double bh = v * plot_h;
        out += "<rect x=\"" + svg::num(x) + "\" y=\"" + svg::num(top + plot_h - bh) + "\" width=\"" + svg::num(bar_w) + "\" height=\"" +
               svg::num(bh) + "\" fill=\"#4a78b0\"><title>" + svg::escape(tokens[i]) + " " + svg::num(v) + "</title></rect>\n";
        const double lx = x + bar_w / 2.0;
        const double ly = top + plot_h + 12.0;
        svg::text(out, lx, ly, tokens[i], " text-anchor=\"end\" transform=\"rotate(-60 " + svg::num(lx) + " " + svg::num(ly) + ")\"");
    }
    out += "</svg>\n";
    return out;
}

/// T x T grid of cells colored by `values` on the diverging [-1, 1] scale.
[[nodiscard]] inline std::string render_heatmap(const std::vector<std::string>& tokens, const MatrixD& values, const std::string& title) {
    const auto n = tokens.size();
    if (static_cast<std::size_t>(values.rows()) != n || static_cast<std::size_t>(values.cols()) != n) {
        throw InvalidInput("heatmap: matrix must be T x T");
    }
    const double cell = 22.0, left = 90.0, top = 100.0;
    const double w = left + static_cast<double>(n) * cell + 20.0;
    const double h = top + static_cast<double>(n) * cell + 20.0;
    std::string out = svg::header(w, h);
    svg::text(out, 10.0, 18.0, title);
    for (std::size_t j = 0; j < n; ++j) {
        const double lx = left + (static_cast<double>(j) + 0.5) * cell;
        const double ly = top - 6.0;
        svg::text(out, lx, ly, tokens[j], " transform=\"rotate(-60 " + svg::num(lx) + " " + svg::num(ly) + ")\"");
    }
    for (std::size_t i = 0; i < n; ++i) {
        svg::text(out, left - 6.0, top + (static_cast<double>(i) + 0.5) * cell + 4.0, tokens[i], " text-anchor=\"end\"");
        for (std::size_t j = 0; j < n; ++j) {
            const double v = values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            out += "<rect x=\"" + svg::num(left + static_cast<double>(j) * cell) + "\" y=\"" + svg::num(top + static_cast<double>(i) * cell) +
                   "\" width=\"" + svg::num(cell) + "\" height=\"" + svg::num(cell) + "\" fill=\"" + svg::diverging(v) + "\"><title>" +
                   svg::escape(tokens[i]) + " / " + svg::escape(tokens[j]) + " " + svg::num(v) + "</title></rect>\n";
        }
    }
    out += "</svg>\n";
    return out;
}

struct GraphLayout {
    std::vector<double> x, y;
};

/// Seeded force-directed layout. Nodes start on a circle; every pair repels, and
/// pairs with |cos| >= threshold are pulled toward rest length (1 - |cos|) * L0.
[[nodiscard]] inline GraphLayout layout_token_graph(const MatrixD& cosine, const VizOptions& opt) {
    const auto n = static_cast<std::size_t>(cosine.rows());
    GraphLayout g;
    g.x.assign(n, 0.0);
    g.y.assign(n, 0.0);
    if (n == 0) return g;
    Rng rng(derive_seed(opt.layout_seed, "layout"));
    const double pi = 3.14159265358979323846;
    const double l0 = opt.spring_length;
    for (std::size_t i = 0; i < n; ++i) {
        const double angle = 2.0 * pi * (static_cast<double>(i) + 0.5 * rng.uniform()) / static_cast<double>(n);
        g.x[i] = l0 * std::cos(angle);
        g.y[i] = l0 * std::sin(angle);
    }
    std::vector<double> dx(n), dy(n);
    for (int it = 0; it < opt.layout_iterations; ++it) {
        const double temp = 0.1 * l0 * (1.0 - static_cast<double>(it) / static_cast<double>(opt.layout_iterations));
        std::fill(dx.begin(), dx.end(), 0.0);
        std::fill(dy.begin(), dy.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                double ex = g.x[i] - g.x[j];
                double ey = g.y[i] - g.y[j];
                const double d = std::max(std::sqrt(ex * ex + ey * ey), 1e-3);
                ex /= d;
                ey /= d;
                double f = 0.05 * l0 * l0 / (d * d);
                const double c = std::abs(cosine(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
                if (c >= opt.edge_threshold) f -= 0.5 * (d - (1.0 - c) * l0) / l0;
                dx[i] += f * ex;
                dy[i] += f * ey;
                dx[j] -= f * ex;
                dy[j] -= f * ey;
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double len = std::sqrt(dx[i] * dx[i] + dy[i] * dy[i]) * l0;
            if (len <= 0.0) continue;
            const double step = std::min(len, temp) / len * l0;
            g.x[i] += dx[i] * step;
            g.y[i] += dy[i] * step;
        }
    }
    return g;
}

/// Circles sized by sqrt(capacity), edges for |cos| >= threshold (red positive,
/// blue negative).
[[nodiscard]] inline std::string render_token_graph(const std::vector<std::string>& tokens, const VectorD& capacities, const MatrixD& cosine,
                                                    const std::string& title, const VizOptions& opt = {}) {
    const auto n = tokens.size();
    if (static_cast<std::size_t>(capacities.size()) != n || static_cast<std::size_t>(cosine.rows()) != n ||
        static_cast<std::size_t>(cosine.cols()) != n) {
        throw InvalidInput("token graph: capacities and cosine matrix must match the token count");
    }
    auto g = layout_token_graph(cosine, opt);
    const double size = 480.0, margin = 40.0, top = 30.0;
    if (n > 0) {
        const auto [xmin, xmax] = std::minmax_element(g.x.begin(), g.x.end());
        const auto [ymin, ymax] = std::minmax_element(g.y.begin(), g.y.end());
        const double span = std::max({*xmax - *xmin, *ymax - *ymin, 1e-9});
        const double scale = (size - 2.0 * margin) / span;
        const double ox = *xmin, oy = *ymin;
        for (std::size_t i = 0; i < n; ++i) {
            g.x[i] = n == 1 ? size / 2.0 : margin + (g.x[i] - ox) * scale;
            g.y[i] = n == 1 ? size / 2.0 + top : top + margin + (g.y[i] - oy) * scale;
        }
    }
    std::string out = svg::header(size, size + top);
    svg::text(out, 10.0, 18.0, title);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = cosine(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
            if (std::abs(c) < opt.edge_threshold) continue;
            out += "<line x1=\"" + svg::num(g.x[i]) + "\" y1=\"" + svg::num(g.y[i]) + "\" x2=\"" + svg::num(g.x[j]) + "\" y2=\"" +
                   svg::num(g.y[j]) + "\" stroke=\"" + (c > 0 ? "#b2182b" : "#2166ac") + "\" stroke-width=\"" + svg::num(0.5 + 2.5 * std::abs(c)) +
                   "\" stroke-opacity=\"0.7\"/>\n";
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double cap = std::max(0.0, capacities(static_cast<Eigen::Index>(i)));
        const double r = std::max(opt.min_radius, opt.max_radius * std::sqrt(cap));
        out += "<circle cx=\"" + svg::num(g.x[i]) + "\" cy=\"" + svg::num(g.y[i]) + "\" r=\"" + svg::num(r) +
               "\" fill=\"#f2b134\" fill-opacity=\"0.8\" stroke=\"#444444\"><title>" + svg::escape(tokens[i]) + " " + svg::num(cap) +
               "</title></circle>\n";
        svg::text(out, g.x[i], g.y[i] - r - 3.0, tokens[i], " text-anchor=\"middle\"");
    }
    out += "</svg>\n";
    return out;
}

inline void emit_capacity_barchart(const VizTrace& v, LayerTag layer, const std::string& path) {
    svg::write_file(path, render_barchart(v.tokens, capacity(v.layer(layer)), "capacity: " + std::string(to_string(layer))));
}

inline void emit_interference_heatmap(const VizTrace& v, LayerTag layer, const std::string& path) {
    svg::write_file(path, render_heatmap(v.tokens, cosine_matrix(v.layer(layer)), "interference (cosine): " + std::string(to_string(layer))));
}

inline void emit_token_graph(const VizTrace& v, LayerTag layer, const std::string& path, const VizOptions& opt = {}) {
    const auto rep = v.layer(layer);
    svg::write_file(path, render_token_graph(v.tokens, capacity(rep), cosine_matrix(rep), "token graph: " + std::string(to_string(layer)), opt));
}

/// Capacity and interference panels for every layer, named
/// {example_id}_{layer}_{panel}.svg. The vmask capacity panel shows the mask
/// probabilities; the attention panels use rows of the head-averaged attention.
inline std::vector<std::string> emit_cross_layer(const VizTrace& v, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::vector<std::string> written;
    const auto attention = RepresentationMatrix(LayerTag::attention_out, v.mean_attention, v.mean_attention.rows());
    const std::pair<std::string, LayerTag> layers[] = {{"embedding", LayerTag::embedding},
                                                       {"vmask", LayerTag::vmask},
                                                       {"attention", LayerTag::attention_out},
                                                       {"fc1", LayerTag::fc1},
                                                       {"fc2", LayerTag::fc2}};
    for (const auto& [name, tag] : layers) {
        const auto rep = tag == LayerTag::attention_out ? attention : v.layer(tag);
        const VectorD heights = tag == LayerTag::vmask ? v.mask_probs : capacity(rep);
        const auto base = (std::filesystem::path(dir) / (v.example_id + "_" + name + "_")).string();
        const std::string what = tag == LayerTag::vmask ? "mask probability: " : "capacity: ";
        svg::write_file(base + "capacity.svg", render_barchart(v.tokens, heights, what + name));
        svg::write_file(base + "interference.svg", render_heatmap(v.tokens, cosine_matrix(rep), "interference (cosine): " + name));
        written.push_back(base + "capacity.svg");
        written.push_back(base + "interference.svg");
    }
    return written;
}

} // namespace safr
