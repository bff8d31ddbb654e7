#pragma once

#include "safr/viz.hpp"

namespace safr::testing {

/// Fixed hand-built trace: four tokens with a known geometry at every layer.
inline VizTrace golden_trace() {
    VizTrace v;
    v.example_id = "golden";
    v.tokens = {"the", "film", "was", "<great>"};
    MatrixD h(4, 3);
    h << 1.0, 0.0, 0.0,
         0.9, 0.1, 0.0,
         0.0, 1.0, 0.0,
        -0.2, 0.0, 1.0;
    for (auto tag : kAllLayers) v.layers[tag] = h;
    v.layers[LayerTag::fc1] = MatrixD::Identity(4, 4);
    v.mask_probs = VectorD(4);
    v.mask_probs << 0.1, 0.4, 0.7, 0.95;
    MatrixD a(4, 4);
    a << 0.7, 0.1, 0.1, 0.1,
         0.25, 0.25, 0.25, 0.25,
         0.0, 0.5, 0.5, 0.0,
         0.1, 0.2, 0.3, 0.4;
    v.mean_attention = a;
    return v;
}

/// Golden figure set: file name -> rendered SVG.
inline std::vector<std::pair<std::string, std::string>> golden_figures() {
    const auto v = golden_trace();
    const auto rep = v.layer(LayerTag::embedding);
    const auto attention = RepresentationMatrix(LayerTag::attention_out, v.mean_attention, 4);
    return {
        {"barchart.svg", render_barchart(v.tokens, capacity(rep), "capacity: embedding")},
        {"heatmap.svg", render_heatmap(v.tokens, cosine_matrix(rep), "interference (cosine): embedding")},
        {"graph.svg", render_token_graph(v.tokens, capacity(rep), cosine_matrix(rep), "token graph: embedding")},
        {"attention_interference.svg", render_heatmap(v.tokens, cosine_matrix(attention), "interference (cosine): attention")},
    };
}

} // namespace safr::testing
