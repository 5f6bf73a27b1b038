#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "seat/model.hpp"
#include "seat/trainer.hpp"

using namespace seat;

namespace {

// Micro model in double precision so the finite-difference quotient at
// step 1e-3 is not drowned by rounding.
ModelConfig micro_config() {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 16;
    c.n_heads = 2;
    c.d_ff = 32;
    c.context_len = 10;
    c.vocab_size = 13;
    c.seed = 21;
    return c;
}

struct Batch {
    std::vector<std::vector<int>> inputs;
    std::vector<std::vector<int>> targets;
    std::vector<std::vector<std::uint8_t>> ignore;
};

Batch make_batch(std::mt19937_64& rng, const ModelConfig& cfg, int n) {
    Batch b;
    for (int i = 0; i < n; ++i) {
        const std::size_t len = 4 + rng() % 5;
        std::vector<int> toks(len + 1);
        for (auto& t : toks) t = static_cast<int>(rng() % cfg.vocab_size);
        std::vector<int> inputs(toks.begin(), toks.end() - 1);
        std::vector<int> targets(toks.begin() + 1, toks.end());
        std::vector<std::uint8_t> ignore(len, 0);
        // Mask a question-like prefix, keep at least two scored positions.
        const std::size_t cut = rng() % (len - 1);
        for (std::size_t p = 0; p < cut; ++p) ignore[p] = 1;
        b.inputs.push_back(std::move(inputs));
        b.targets.push_back(std::move(targets));
        b.ignore.push_back(std::move(ignore));
    }
    return b;
}

// Sum over the batch of CE plus alpha * KL against fixed anchor parameters.
// alpha == 0 skips the anchor entirely. Returns the loss; fills grads when
// requested. This mirrors one unscaled training accumulation step.
double batch_loss(const ModelConfig& cfg, const ParamsT<double>& p, const ParamsT<double>& anchor,
                  const Batch& b, double alpha, ParamsT<double>* grads) {
    double total = 0;
    for (std::size_t i = 0; i < b.inputs.size(); ++i) {
        auto cache = forward(cfg, p, b.inputs[i]);
        MatT<double> dlogits;
        total += loss_ce<double>(cache.logits, b.targets[i], b.ignore[i], grads ? &dlogits : nullptr);
        if (grads) {
            auto g = backward(cfg, p, b.inputs[i], cache, dlogits);
            for_each_param(g, [&](const std::string& name, TensorT<double>& t) {
                for_each_param(*grads, [&](const std::string& name2, TensorT<double>& acc) {
                    if (name == name2) {
                        for (std::size_t k = 0; k < t.data.size(); ++k) acc.data[k] += t.data[k];
                    }
                });
            });
        }
        if (alpha != 0.0) {
            auto anchor_cache = forward(cfg, anchor, b.inputs[i]);
            MatT<double> dkl;
            const double kl = kl_term<double>(anchor_cache.logits, cache.logits, b.ignore[i],
                                             grads ? &dkl : nullptr);
            total += alpha * kl;
            if (grads) {
                for (auto& v : dkl.data) v *= alpha;
                auto g = backward(cfg, p, b.inputs[i], cache, dkl);
                for_each_param(g, [&](const std::string& name, TensorT<double>& t) {
                    for_each_param(*grads, [&](const std::string& name2, TensorT<double>& acc) {
                        if (name == name2) {
                            for (std::size_t k = 0; k < t.data.size(); ++k) acc.data[k] += t.data[k];
                        }
                    });
                });
            }
        }
    }
    return total;
}

struct CoordCheck {
    std::string name;
    std::size_t index;
    double analytic;
    double fd;
};

// Central difference at step h on one coordinate.
double fd_at(const ModelConfig& cfg, ParamsT<double>& p, const ParamsT<double>& anchor,
             const Batch& b, double alpha, TensorT<double>& tensor, std::size_t idx, double h) {
    const double saved = tensor.data[idx];
    tensor.data[idx] = saved + h;
    const double up = batch_loss(cfg, p, anchor, b, alpha, nullptr);
    tensor.data[idx] = saved - h;
    const double down = batch_loss(cfg, p, anchor, b, alpha, nullptr);
    tensor.data[idx] = saved;
    return (up - down) / (2.0 * h);
}

// Checks >= coords_per_tensor coordinates in every parameter tensor with the
// usual allclose bound |a-f| <= atol + rtol*max(|a|,|f|), rtol 1e-3, atol
// 1e-5. The absolute floor covers near-zero gradients (unused vocabulary
// rows) and the h^2 truncation of the centered quotient, which reaches the
// rtol scale at step 1e-3 on high-curvature coordinates. A wrong gradient
// (sign flip, lost term, bad factor) lands orders of magnitude above this.
void run_gradcheck(double alpha, int coords_per_tensor) {
    const ModelConfig cfg = micro_config();
    ParamsT<double> p = convert_params<double>(init_params(cfg));
    ModelConfig anchor_cfg = cfg;
    anchor_cfg.seed = cfg.seed + 100;
    const ParamsT<double> anchor = convert_params<double>(init_params(anchor_cfg));

    std::mt19937_64 rng(2024);
    const Batch batch = make_batch(rng, cfg, 3);

    ParamsT<double> grads = make_params<double>(cfg);
    batch_loss(cfg, p, anchor, batch, alpha, &grads);

    int checked = 0;
    int failed = 0;
    std::vector<CoordCheck> failures;
    for_each_param(p, [&](const std::string& name, TensorT<double>& t) {
        for (int c = 0; c < coords_per_tensor; ++c) {
            const std::size_t idx = rng() % t.data.size();
            const double fd = fd_at(cfg, p, anchor, batch, alpha, t, idx, 1e-3);
            double analytic = 0;
            for_each_param(grads, [&](const std::string& gname, TensorT<double>& g) {
                if (gname == name) analytic = g.data[idx];
            });
            ++checked;
            const double tol = 1e-5 + 1e-3 * std::max(std::abs(analytic), std::abs(fd));
            if (std::abs(analytic - fd) > tol) {
                ++failed;
                failures.push_back({name, idx, analytic, fd});
            }
        }
    });

    CHECK(checked >= 200);
    for (const auto& f : failures) {
        MESSAGE("mismatch at ", f.name, "[", f.index, "]: analytic=", f.analytic, " fd=", f.fd);
    }
    CHECK(failed == 0);
}

}  // namespace

TEST_CASE("cross-entropy gradients match central finite differences") {
    run_gradcheck(/*alpha=*/0.0, /*coords_per_tensor=*/10);
}

TEST_CASE("anchored loss gradients match central finite differences") {
    run_gradcheck(/*alpha=*/1.0, /*coords_per_tensor=*/10);
}

TEST_CASE("alpha zero reduces to the pure cross-entropy gradient") {
    const ModelConfig cfg = micro_config();
    ParamsT<double> p = convert_params<double>(init_params(cfg));
    ModelConfig anchor_cfg = cfg;
    anchor_cfg.seed = 7;
    const ParamsT<double> anchor = convert_params<double>(init_params(anchor_cfg));
    std::mt19937_64 rng(5);
    const Batch batch = make_batch(rng, cfg, 2);

    ParamsT<double> g_plain = make_params<double>(cfg);
    ParamsT<double> g_zero = make_params<double>(cfg);
    const double l_plain = batch_loss(cfg, p, anchor, batch, 0.0, &g_plain);
    const double l_zero = batch_loss(cfg, p, anchor, batch, 0.0, &g_zero);
    CHECK(l_plain == l_zero);
    for_each_param(g_plain, [&](const std::string& name, TensorT<double>& t) {
        for_each_param(g_zero, [&](const std::string& name2, TensorT<double>& u) {
            if (name == name2) CHECK(t.data == u.data);
        });
    });
}

TEST_CASE("kl gradient scales linearly in alpha") {
    const ModelConfig cfg = micro_config();
    ParamsT<double> p = convert_params<double>(init_params(cfg));
    ModelConfig anchor_cfg = cfg;
    anchor_cfg.seed = 31;
    const ParamsT<double> anchor = convert_params<double>(init_params(anchor_cfg));
    std::mt19937_64 rng(17);
    const Batch batch = make_batch(rng, cfg, 2);

    ParamsT<double> g0 = make_params<double>(cfg);
    ParamsT<double> g1 = make_params<double>(cfg);
    ParamsT<double> g2 = make_params<double>(cfg);
    batch_loss(cfg, p, anchor, batch, 0.0, &g0);
    batch_loss(cfg, p, anchor, batch, 1.0, &g1);
    batch_loss(cfg, p, anchor, batch, 2.0, &g2);

    // g2 - g0 must equal 2 * (g1 - g0) up to double rounding.
    for_each_param(g0, [&](const std::string& name, TensorT<double>& base) {
        TensorT<double>*one = nullptr, *two = nullptr;
        for_each_param(g1, [&](const std::string& n, TensorT<double>& t) {
            if (n == name) one = &t;
        });
        for_each_param(g2, [&](const std::string& n, TensorT<double>& t) {
            if (n == name) two = &t;
        });
        REQUIRE(one != nullptr);
        REQUIRE(two != nullptr);
        for (std::size_t i = 0; i < base.data.size(); ++i) {
            const double lhs = two->data[i] - base.data[i];
            const double rhs = 2.0 * (one->data[i] - base.data[i]);
            CHECK(std::abs(lhs - rhs) <= 1e-9 * std::max({std::abs(lhs), std::abs(rhs), 1.0}));
        }
    });
}
