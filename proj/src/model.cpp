#include "seat/model.hpp"

#include <random>

namespace seat {

void validate(const ModelConfig& c) {
    if (c.n_layers < 1) throw ValidationError("model: n_layers must be >= 1");
    if (c.d_model < 1) throw ValidationError("model: d_model must be >= 1");
    if (c.n_heads < 1) throw ValidationError("model: n_heads must be >= 1");
    if (c.d_model % c.n_heads != 0) {
        throw ValidationError("model: d_model " + std::to_string(c.d_model) +
                              " not divisible by n_heads " + std::to_string(c.n_heads));
    }
    if (c.d_ff < 1) throw ValidationError("model: d_ff must be >= 1");
    if (c.context_len < 2) throw ValidationError("model: context_len must be >= 2");
    if (c.vocab_size < 5) {
        throw ValidationError("model: vocab_size must cover the four specials plus content");
    }
}

Params init_params(const ModelConfig& config) {
    validate(config);
    Params p = make_params<float>(config);
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<float> dist(0.0f, 0.02f);
    for_each_param(p, [&](const std::string& name, TensorT<float>& t) {
        if (t.shape.size() == 2) {
            for (auto& v : t.data) v = dist(rng);
        } else if (name.ends_with("gain")) {
            std::fill(t.data.begin(), t.data.end(), 1.0f);
        } else {
            std::fill(t.data.begin(), t.data.end(), 0.0f);
        }
    });
    return p;
}

std::vector<int> greedy_decode(const ModelCheckpoint& ckpt, std::span<const int> prompt,
                               int max_new, int eos_id) {
    if (prompt.empty()) throw ValidationError("greedy_decode: empty prompt");
    std::vector<int> seq(prompt.begin(), prompt.end());
    std::vector<int> out;
    for (int step = 0; step < max_new; ++step) {
        if (seq.size() >= static_cast<std::size_t>(ckpt.config.context_len)) break;
        auto cache = forward(ckpt.config, ckpt.params, std::span<const int>(seq));
        const float* row = cache.logits.row(cache.logits.rows - 1);
        int best = 0;
        for (std::size_t i = 1; i < cache.logits.cols; ++i) {
            if (row[i] > row[best]) best = static_cast<int>(i);
        }
        seq.push_back(best);
        if (best == eos_id) break;
        out.push_back(best);
    }
    return out;
}

ActivationSet capture_activations(const ModelCheckpoint& ckpt,
                                  const std::vector<std::vector<int>>& sequences, int layer,
                                  const std::string& label) {
    if (sequences.empty()) throw ValidationError("capture_activations: empty sequence list");
    if (layer < 0 || layer > ckpt.config.n_layers) {
        throw ValidationError("capture_activations: layer " + std::to_string(layer) +
                              " outside [0, " + std::to_string(ckpt.config.n_layers) + "]");
    }
    ActivationSet set;
    set.layer = layer;
    set.rows = Mat(sequences.size(), static_cast<std::size_t>(ckpt.config.d_model));
    set.labels.assign(sequences.size(), label);
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        if (sequences[i].empty()) {
            throw ValidationError("capture_activations: empty token sequence at index " +
                                  std::to_string(i));
        }
        auto cache = forward(ckpt.config, ckpt.params, std::span<const int>(sequences[i]));
        const auto& h = cache.hidden[static_cast<std::size_t>(layer)];
        const float* src = h.row(h.rows - 1);
        std::copy(src, src + h.cols, set.rows.row(i));
    }
    return set;
}

}  // namespace seat
