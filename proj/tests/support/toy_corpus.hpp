#pragma once

// Deterministic two-class corpus: each sentence mixes filler words with a few
// polarity words, and the label follows the polarity majority.

#include "safr/dataset_io.hpp"
#include "safr/model.hpp"
#include "safr/rng.hpp"

#include <string>
#include <vector>

namespace safr::testing {

inline const std::vector<std::string> kPositiveWords = {"good", "great", "fine", "superb", "lovely", "charming"};
inline const std::vector<std::string> kNegativeWords = {"bad", "awful", "dull", "boring", "weak", "messy"};
inline const std::vector<std::string> kFillerWords = {"the", "movie", "a", "plot", "was", "and", "it", "actors", "film", "story", "of", "scene"};

inline std::vector<RawExample> toy_examples(std::size_t n, std::uint64_t seed, std::size_t min_len = 4, std::size_t max_len = 12) {
    Rng rng(derive_seed(seed, "toy"));
    std::vector<RawExample> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(rng.below(2));
        const auto len = min_len + rng.below(max_len - min_len + 1);
        const auto& major = label == 1 ? kPositiveWords : kNegativeWords;
        const auto& minor = label == 1 ? kNegativeWords : kPositiveWords;
        std::vector<std::string> words;
        const auto n_major = 1 + rng.below(2);
        for (std::size_t k = 0; k < n_major; ++k) words.push_back(major[rng.below(major.size())]);
        if (n_major == 2 && rng.uniform() < 0.3) words.push_back(minor[rng.below(minor.size())]);
        while (words.size() < len) words.push_back(kFillerWords[rng.below(kFillerWords.size())]);
        shuffle(words.begin(), words.end(), rng);
        std::string text;
        for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
        out.push_back({label, text});
    }
    return out;
}

inline Dataset toy_dataset(std::uint64_t seed = 7, std::size_t n_train = 240, std::size_t n_dev = 60, std::size_t n_test = 80,
                           std::uint32_t max_len = 16) {
    IngestOptions opt;
    opt.min_freq = 1;
    opt.max_len = max_len;
    opt.seed = seed;
    return ingest(toy_examples(n_train, derive_seed(seed, "train")), toy_examples(n_dev, derive_seed(seed, "dev")),
                  toy_examples(n_test, derive_seed(seed, "test")), opt);
}

inline ModelConfig toy_model_config(const Dataset& ds, std::size_t embed_dim = 16, std::size_t heads = 4) {
    ModelConfig c;
    c.embed_dim = embed_dim;
    c.ffn_dim = 4 * embed_dim;
    c.heads = heads;
    c.vocab_size = ds.vocab.size();
    c.num_classes = ds.num_classes;
    c.max_len = ds.max_len;
    return c;
}

} // namespace safr::testing
