#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "seat/errors.hpp"
#include "seat/tensor.hpp"

namespace seat {

// ---------------------------------------------------------------------------
// Configuration and parameters
// ---------------------------------------------------------------------------

struct ModelConfig {
    int n_layers = 2;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 256;
    int context_len = 64;
    int vocab_size = 0;
    std::uint64_t seed = 4;

    bool operator==(const ModelConfig&) const = default;
};

void validate(const ModelConfig& config);

template <typename T>
struct BlockParamsT {
    TensorT<T> ln1_gain, ln1_bias;
    TensorT<T> wq, bq, wk, bk, wv, bv, wo, bo;
    TensorT<T> ln2_gain, ln2_bias;
    TensorT<T> w1, b1, w2, b2;
};

template <typename T>
struct ParamsT {
    TensorT<T> tok_emb, pos_emb;
    std::vector<BlockParamsT<T>> blocks;
    TensorT<T> lnf_gain, lnf_bias;
    TensorT<T> unembed;
};

using Params = ParamsT<float>;

// Canonical enumeration order; checkpoint layout, masks and gradient maps all
// follow it.
template <typename T, typename F>
void for_each_param(ParamsT<T>& p, F&& fn) {
    fn("tok_emb", p.tok_emb);
    fn("pos_emb", p.pos_emb);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string prefix = "layers." + std::to_string(i) + ".";
        fn(prefix + "ln1.gain", b.ln1_gain);
        fn(prefix + "ln1.bias", b.ln1_bias);
        fn(prefix + "attn.wq", b.wq);
        fn(prefix + "attn.bq", b.bq);
        fn(prefix + "attn.wk", b.wk);
        fn(prefix + "attn.bk", b.bk);
        fn(prefix + "attn.wv", b.wv);
        fn(prefix + "attn.bv", b.bv);
        fn(prefix + "attn.wo", b.wo);
        fn(prefix + "attn.bo", b.bo);
        fn(prefix + "ln2.gain", b.ln2_gain);
        fn(prefix + "ln2.bias", b.ln2_bias);
        fn(prefix + "mlp.w1", b.w1);
        fn(prefix + "mlp.b1", b.b1);
        fn(prefix + "mlp.w2", b.w2);
        fn(prefix + "mlp.b2", b.b2);
    }
    fn("ln_f.gain", p.lnf_gain);
    fn("ln_f.bias", p.lnf_bias);
    fn("unembed", p.unembed);
}

template <typename T, typename F>
void for_each_param(const ParamsT<T>& p, F&& fn) {
    for_each_param(const_cast<ParamsT<T>&>(p), [&](const std::string& name, TensorT<T>& t) {
        fn(name, static_cast<const TensorT<T>&>(t));
    });
}

template <typename T>
ParamsT<T> make_params(const ModelConfig& c) {
    const auto V = static_cast<std::size_t>(c.vocab_size);
    const auto D = static_cast<std::size_t>(c.d_model);
    const auto F = static_cast<std::size_t>(c.d_ff);
    const auto C = static_cast<std::size_t>(c.context_len);
    ParamsT<T> p;
    p.tok_emb = TensorT<T>({V, D});
    p.pos_emb = TensorT<T>({C, D});
    p.blocks.resize(static_cast<std::size_t>(c.n_layers));
    for (auto& b : p.blocks) {
        b.ln1_gain = TensorT<T>({D});
        b.ln1_bias = TensorT<T>({D});
        b.wq = TensorT<T>({D, D});
        b.bq = TensorT<T>({D});
        b.wk = TensorT<T>({D, D});
        b.bk = TensorT<T>({D});
        b.wv = TensorT<T>({D, D});
        b.bv = TensorT<T>({D});
        b.wo = TensorT<T>({D, D});
        b.bo = TensorT<T>({D});
        b.ln2_gain = TensorT<T>({D});
        b.ln2_bias = TensorT<T>({D});
        b.w1 = TensorT<T>({F, D});
        b.b1 = TensorT<T>({F});
        b.w2 = TensorT<T>({D, F});
        b.b2 = TensorT<T>({D});
    }
    p.lnf_gain = TensorT<T>({D});
    p.lnf_bias = TensorT<T>({D});
    p.unembed = TensorT<T>({V, D});
    return p;
}

Params init_params(const ModelConfig& config);

template <typename T>
std::size_t param_count(const ParamsT<T>& p) {
    std::size_t n = 0;
    for_each_param(p, [&](const std::string&, const TensorT<T>& t) { n += t.size(); });
    return n;
}

template <typename To, typename From>
ParamsT<To> convert_params(const ParamsT<From>& src) {
    ParamsT<To> dst;
    dst.blocks.resize(src.blocks.size());
    auto copy = [](const TensorT<From>& a, TensorT<To>& b) {
        b.shape = a.shape;
        b.data.assign(a.data.begin(), a.data.end());
    };
    // Mirror the canonical enumeration pairwise.
    std::vector<const TensorT<From>*> srcs;
    for_each_param(src, [&](const std::string&, const TensorT<From>& t) { srcs.push_back(&t); });
    std::size_t idx = 0;
    for_each_param(dst, [&](const std::string&, TensorT<To>& t) { copy(*srcs[idx++], t); });
    return dst;
}

struct Provenance {
    std::string method = "init";
    std::string parent;  // hex hash of the parent checkpoint, empty for roots
    std::string corpus;  // hex hash of the training vocabulary

    bool operator==(const Provenance&) const = default;
};

struct ModelCheckpoint {
    ModelConfig config;
    Params params;
    int step = 0;
    Provenance provenance;
};

// ---------------------------------------------------------------------------
// Forward pass with full cache
// ---------------------------------------------------------------------------

template <typename T>
struct BlockCacheT {
    MatT<T> ln1_out;              // [T, D]
    MatT<T> n1;                   // normalized pre-gain values
    std::vector<T> rstd1;         // per position
    MatT<T> q, k, v;              // [T, D]
    std::vector<MatT<T>> probs;   // per head, [T, T] lower-triangular rows
    MatT<T> ctx;                  // [T, D] concat of head contexts
    MatT<T> x_mid;                // residual stream after attention
    MatT<T> ln2_out, n2;
    std::vector<T> rstd2;
    MatT<T> h1, act;              // [T, F] pre-activation and gelu output
};

template <typename T>
struct ForwardCacheT {
    std::vector<MatT<T>> hidden;  // n_layers+1 entries; hidden[0] = embedding output
    std::vector<BlockCacheT<T>> blocks;
    MatT<T> nf, xf;
    std::vector<T> rstdf;
    MatT<T> logits;               // [T, vocab]
};

using ForwardCache = ForwardCacheT<float>;

inline constexpr double kLnEps = 1e-5;

namespace detail {

template <typename T>
void layer_norm_forward(const T* x, const T* gain, const T* bias, std::size_t d, T* out, T* n_out,
                        T& rstd_out) {
    T mean = 0;
    for (std::size_t i = 0; i < d; ++i) mean += x[i];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t i = 0; i < d; ++i) {
        T c = x[i] - mean;
        var += c * c;
    }
    var /= static_cast<T>(d);
    T rstd = T(1) / std::sqrt(var + static_cast<T>(kLnEps));
    for (std::size_t i = 0; i < d; ++i) {
        T n = (x[i] - mean) * rstd;
        n_out[i] = n;
        out[i] = gain[i] * n + bias[i];
    }
    rstd_out = rstd;
}

// dx += LN backprop; dgain/dbias accumulated.
template <typename T>
void layer_norm_backward(const T* dout, const T* n, T rstd, const T* gain, std::size_t d, T* dx,
                         T* dgain, T* dbias) {
    T mean_dn = 0, mean_dn_n = 0;
    for (std::size_t i = 0; i < d; ++i) {
        T dn = dout[i] * gain[i];
        mean_dn += dn;
        mean_dn_n += dn * n[i];
        dgain[i] += dout[i] * n[i];
        dbias[i] += dout[i];
    }
    mean_dn /= static_cast<T>(d);
    mean_dn_n /= static_cast<T>(d);
    for (std::size_t i = 0; i < d; ++i) {
        T dn = dout[i] * gain[i];
        dx[i] += rstd * (dn - mean_dn - n[i] * mean_dn_n);
    }
}

template <typename T>
void linear_forward(const TensorT<T>& w, const T* bias, const T* x, T* y) {
    const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
    for (std::size_t o = 0; o < out_dim; ++o) {
        const T* row = w.ptr() + o * in_dim;
        T acc = bias ? bias[o] : T(0);
        for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * x[i];
        y[o] = acc;
    }
}

// dw += dy (x)ᵀ outer product; db += dy; dx += wᵀ dy.
template <typename T>
void linear_backward(const TensorT<T>& w, const T* x, const T* dy, TensorT<T>& dw, T* db, T* dx) {
    const std::size_t out_dim = w.shape[0], in_dim = w.shape[1];
    for (std::size_t o = 0; o < out_dim; ++o) {
        const T dyo = dy[o];
        const T* wrow = w.ptr() + o * in_dim;
        T* dwrow = dw.ptr() + o * in_dim;
        if (db) db[o] += dyo;
        if (dx) {
            for (std::size_t i = 0; i < in_dim; ++i) {
                dwrow[i] += dyo * x[i];
                dx[i] += wrow[i] * dyo;
            }
        } else {
            for (std::size_t i = 0; i < in_dim; ++i) dwrow[i] += dyo * x[i];
        }
    }
}

inline constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluC1 = 0.044715;

template <typename T>
T gelu(T z) {
    const T c0 = static_cast<T>(kGeluC0), c1 = static_cast<T>(kGeluC1);
    return T(0.5) * z * (T(1) + std::tanh(c0 * (z + c1 * z * z * z)));
}

template <typename T>
T gelu_grad(T z) {
    const T c0 = static_cast<T>(kGeluC0), c1 = static_cast<T>(kGeluC1);
    const T u = c0 * (z + c1 * z * z * z);
    const T th = std::tanh(u);
    return T(0.5) * (T(1) + th) + T(0.5) * z * (T(1) - th * th) * c0 * (T(1) + T(3) * c1 * z * z);
}

}  // namespace detail

template <typename T>
ForwardCacheT<T> forward(const ModelConfig& cfg, const ParamsT<T>& p, std::span<const int> tokens) {
    const std::size_t seq = tokens.size();
    if (seq > static_cast<std::size_t>(cfg.context_len)) {
        throw ValidationError("sequence length " + std::to_string(seq) + " exceeds context_len " +
                              std::to_string(cfg.context_len));
    }
    for (int id : tokens) {
        if (id < 0 || id >= cfg.vocab_size) {
            throw ValidationError("token id out of range for model vocab: " + std::to_string(id));
        }
    }
    const std::size_t D = static_cast<std::size_t>(cfg.d_model);
    const std::size_t H = static_cast<std::size_t>(cfg.n_heads);
    const std::size_t Hd = D / H;
    const std::size_t F = static_cast<std::size_t>(cfg.d_ff);
    const T scale = T(1) / std::sqrt(static_cast<T>(Hd));

    ForwardCacheT<T> c;
    c.hidden.reserve(static_cast<std::size_t>(cfg.n_layers) + 1);
    c.hidden.emplace_back(seq, D);
    for (std::size_t t = 0; t < seq; ++t) {
        const T* te = p.tok_emb.ptr() + static_cast<std::size_t>(tokens[t]) * D;
        const T* pe = p.pos_emb.ptr() + t * D;
        T* x = c.hidden[0].row(t);
        for (std::size_t i = 0; i < D; ++i) x[i] = te[i] + pe[i];
    }

    c.blocks.resize(static_cast<std::size_t>(cfg.n_layers));
    for (std::size_t l = 0; l < static_cast<std::size_t>(cfg.n_layers); ++l) {
        const auto& bp = p.blocks[l];
        auto& bc = c.blocks[l];
        const MatT<T>& x_in = c.hidden[l];

        bc.ln1_out = MatT<T>(seq, D);
        bc.n1 = MatT<T>(seq, D);
        bc.rstd1.resize(seq);
        for (std::size_t t = 0; t < seq; ++t) {
            detail::layer_norm_forward(x_in.row(t), bp.ln1_gain.ptr(), bp.ln1_bias.ptr(), D,
                                       bc.ln1_out.row(t), bc.n1.row(t), bc.rstd1[t]);
        }

        bc.q = MatT<T>(seq, D);
        bc.k = MatT<T>(seq, D);
        bc.v = MatT<T>(seq, D);
        for (std::size_t t = 0; t < seq; ++t) {
            detail::linear_forward(bp.wq, bp.bq.ptr(), bc.ln1_out.row(t), bc.q.row(t));
            detail::linear_forward(bp.wk, bp.bk.ptr(), bc.ln1_out.row(t), bc.k.row(t));
            detail::linear_forward(bp.wv, bp.bv.ptr(), bc.ln1_out.row(t), bc.v.row(t));
        }

        bc.probs.assign(H, MatT<T>(seq, seq));
        bc.ctx = MatT<T>(seq, D);
        std::vector<T> scores(seq);
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = h * Hd;
            auto& pr = bc.probs[h];
            for (std::size_t i = 0; i < seq; ++i) {
                const T* qi = bc.q.row(i) + off;
                T max_s = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j <= i; ++j) {
                    const T* kj = bc.k.row(j) + off;
                    T s = 0;
                    for (std::size_t d = 0; d < Hd; ++d) s += qi[d] * kj[d];
                    s *= scale;
                    scores[j] = s;
                    max_s = std::max(max_s, s);
                }
                T denom = 0;
                for (std::size_t j = 0; j <= i; ++j) {
                    T e = std::exp(scores[j] - max_s);
                    scores[j] = e;
                    denom += e;
                }
                T* ctx_i = bc.ctx.row(i) + off;
                T* pr_i = pr.row(i);
                for (std::size_t j = 0; j <= i; ++j) {
                    const T pij = scores[j] / denom;
                    pr_i[j] = pij;
                    const T* vj = bc.v.row(j) + off;
                    for (std::size_t d = 0; d < Hd; ++d) ctx_i[d] += pij * vj[d];
                }
            }
        }

        bc.x_mid = MatT<T>(seq, D);
        std::vector<T> attn_out(D);
        for (std::size_t t = 0; t < seq; ++t) {
            detail::linear_forward(bp.wo, bp.bo.ptr(), bc.ctx.row(t), attn_out.data());
            const T* x = x_in.row(t);
            T* xm = bc.x_mid.row(t);
            for (std::size_t i = 0; i < D; ++i) xm[i] = x[i] + attn_out[i];
        }

        bc.ln2_out = MatT<T>(seq, D);
        bc.n2 = MatT<T>(seq, D);
        bc.rstd2.resize(seq);
        bc.h1 = MatT<T>(seq, F);
        bc.act = MatT<T>(seq, F);
        c.hidden.emplace_back(seq, D);
        MatT<T>& x_out = c.hidden[l + 1];
        std::vector<T> mlp_out(D);
        for (std::size_t t = 0; t < seq; ++t) {
            detail::layer_norm_forward(bc.x_mid.row(t), bp.ln2_gain.ptr(), bp.ln2_bias.ptr(), D,
                                       bc.ln2_out.row(t), bc.n2.row(t), bc.rstd2[t]);
            detail::linear_forward(bp.w1, bp.b1.ptr(), bc.ln2_out.row(t), bc.h1.row(t));
            T* a = bc.act.row(t);
            const T* h = bc.h1.row(t);
            for (std::size_t i = 0; i < F; ++i) a[i] = detail::gelu(h[i]);
            detail::linear_forward(bp.w2, bp.b2.ptr(), a, mlp_out.data());
            const T* xm = bc.x_mid.row(t);
            T* xo = x_out.row(t);
            for (std::size_t i = 0; i < D; ++i) xo[i] = xm[i] + mlp_out[i];
        }
    }

    const MatT<T>& x_last = c.hidden.back();
    c.nf = MatT<T>(seq, D);
    c.xf = MatT<T>(seq, D);
    c.rstdf.resize(seq);
    c.logits = MatT<T>(seq, static_cast<std::size_t>(cfg.vocab_size));
    for (std::size_t t = 0; t < seq; ++t) {
        detail::layer_norm_forward(x_last.row(t), p.lnf_gain.ptr(), p.lnf_bias.ptr(), D,
                                   c.xf.row(t), c.nf.row(t), c.rstdf[t]);
        detail::linear_forward(p.unembed, static_cast<const T*>(nullptr), c.xf.row(t),
                               c.logits.row(t));
    }
    return c;
}

// ---------------------------------------------------------------------------
// Losses over logits
// ---------------------------------------------------------------------------

// Mean negative log-likelihood over positions not excluded by ignore_mask
// (1 = excluded). Throws when every position is masked out.
template <typename T>
T loss_ce(const MatT<T>& logits, std::span<const int> targets,
          std::span<const std::uint8_t> ignore_mask, MatT<T>* dlogits = nullptr) {
    if (targets.size() != logits.rows || ignore_mask.size() != logits.rows) {
        throw StructuralError("loss_ce: shape mismatch between logits, targets and mask");
    }
    std::size_t kept = 0;
    for (auto m : ignore_mask) {
        if (!m) ++kept;
    }
    if (kept == 0) {
        throw ValidationError("loss_ce: every position is masked out, loss undefined");
    }
    if (dlogits) {
        *dlogits = MatT<T>(logits.rows, logits.cols);
    }
    const T inv = T(1) / static_cast<T>(kept);
    T total = 0;
    std::vector<T> probs(logits.cols);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        if (ignore_mask[r]) continue;
        const int target = targets[r];
        if (target < 0 || static_cast<std::size_t>(target) >= logits.cols) {
            throw StructuralError("loss_ce: target id out of range");
        }
        const T* row = logits.row(r);
        T max_l = row[0];
        for (std::size_t i = 1; i < logits.cols; ++i) max_l = std::max(max_l, row[i]);
        T denom = 0;
        for (std::size_t i = 0; i < logits.cols; ++i) {
            probs[i] = std::exp(row[i] - max_l);
            denom += probs[i];
        }
        const T log_denom = std::log(denom);
        total += -(row[static_cast<std::size_t>(target)] - max_l - log_denom);
        if (dlogits) {
            T* drow = dlogits->row(r);
            for (std::size_t i = 0; i < logits.cols; ++i) drow[i] = probs[i] / denom * inv;
            drow[static_cast<std::size_t>(target)] -= inv;
        }
    }
    T loss = total * inv;
    if (!std::isfinite(static_cast<double>(loss))) {
        throw NumericError("loss_ce: non-finite loss");
    }
    return loss;
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

template <typename T>
ParamsT<T> backward(const ModelConfig& cfg, const ParamsT<T>& p, std::span<const int> tokens,
                    const ForwardCacheT<T>& c, const MatT<T>& dlogits) {
    const std::size_t seq = tokens.size();
    if (dlogits.rows != seq || dlogits.cols != static_cast<std::size_t>(cfg.vocab_size)) {
        throw StructuralError("backward: dlogits shape does not match forward cache");
    }
    const std::size_t D = static_cast<std::size_t>(cfg.d_model);
    const std::size_t H = static_cast<std::size_t>(cfg.n_heads);
    const std::size_t Hd = D / H;
    const std::size_t F = static_cast<std::size_t>(cfg.d_ff);
    const T scale = T(1) / std::sqrt(static_cast<T>(Hd));

    ParamsT<T> g = make_params<T>(cfg);
    MatT<T> dx(seq, D);  // grad wrt hidden[l]; starts as grad wrt hidden[L]

    // Unembed and final layer norm.
    {
        std::vector<T> dxf(D);
        for (std::size_t t = 0; t < seq; ++t) {
            std::fill(dxf.begin(), dxf.end(), T(0));
            detail::linear_backward(p.unembed, c.xf.row(t), dlogits.row(t), g.unembed,
                                    static_cast<T*>(nullptr), dxf.data());
            detail::layer_norm_backward(dxf.data(), c.nf.row(t), c.rstdf[t], p.lnf_gain.ptr(), D,
                                        dx.row(t), g.lnf_gain.ptr(), g.lnf_bias.ptr());
        }
    }

    std::vector<T> dctx_row(D), dql(D), dkl(D), dvl(D), dln1(D), dh1(F), dact(F), dln2(D);
    for (std::size_t l = static_cast<std::size_t>(cfg.n_layers); l-- > 0;) {
        const auto& bp = p.blocks[l];
        const auto& bc = c.blocks[l];
        auto& bg = g.blocks[l];

        // MLP branch: dx currently holds grad wrt hidden[l+1] = x_mid + mlp.
        MatT<T> dx_mid(seq, D);
        for (std::size_t t = 0; t < seq; ++t) {
            const T* dout = dx.row(t);
            T* dxm = dx_mid.row(t);
            for (std::size_t i = 0; i < D; ++i) dxm[i] = dout[i];

            std::fill(dact.begin(), dact.end(), T(0));
            detail::linear_backward(bp.w2, bc.act.row(t), dout, bg.w2, bg.b2.ptr(), dact.data());
            const T* h = bc.h1.row(t);
            for (std::size_t i = 0; i < F; ++i) dh1[i] = dact[i] * detail::gelu_grad(h[i]);
            std::fill(dln2.begin(), dln2.end(), T(0));
            detail::linear_backward(bp.w1, bc.ln2_out.row(t), dh1.data(), bg.w1, bg.b1.ptr(),
                                    dln2.data());
            detail::layer_norm_backward(dln2.data(), bc.n2.row(t), bc.rstd2[t], bp.ln2_gain.ptr(),
                                        D, dxm, bg.ln2_gain.ptr(), bg.ln2_bias.ptr());
        }

        // Attention branch: x_mid = x_in + Wo ctx + bo.
        MatT<T> dq(seq, D), dk(seq, D), dv(seq, D), dctx(seq, D);
        for (std::size_t t = 0; t < seq; ++t) {
            std::fill(dctx_row.begin(), dctx_row.end(), T(0));
            detail::linear_backward(bp.wo, bc.ctx.row(t), dx_mid.row(t), bg.wo, bg.bo.ptr(),
                                    dctx_row.data());
            T* d = dctx.row(t);
            for (std::size_t i = 0; i < D; ++i) d[i] = dctx_row[i];
        }

        std::vector<T> dprob(seq);
        for (std::size_t h = 0; h < H; ++h) {
            const std::size_t off = h * Hd;
            const auto& pr = bc.probs[h];
            for (std::size_t i = 0; i < seq; ++i) {
                const T* dctx_i = dctx.row(i) + off;
                const T* pr_i = pr.row(i);
                T dot_pd = 0;
                for (std::size_t j = 0; j <= i; ++j) {
                    const T* vj = bc.v.row(j) + off;
                    T dp = 0;
                    for (std::size_t d = 0; d < Hd; ++d) dp += dctx_i[d] * vj[d];
                    dprob[j] = dp;
                    dot_pd += pr_i[j] * dp;
                    T* dvj = dv.row(j) + off;
                    for (std::size_t d = 0; d < Hd; ++d) dvj[d] += pr_i[j] * dctx_i[d];
                }
                const T* qi = bc.q.row(i) + off;
                T* dqi = dq.row(i) + off;
                for (std::size_t j = 0; j <= i; ++j) {
                    const T ds = pr_i[j] * (dprob[j] - dot_pd) * scale;
                    const T* kj = bc.k.row(j) + off;
                    T* dkj = dk.row(j) + off;
                    for (std::size_t d = 0; d < Hd; ++d) {
                        dqi[d] += ds * kj[d];
                        dkj[d] += ds * qi[d];
                    }
                }
            }
        }

        // Project q/k/v grads back through the shared LN1 output.
        for (std::size_t t = 0; t < seq; ++t) {
            std::fill(dln1.begin(), dln1.end(), T(0));
            detail::linear_backward(bp.wq, bc.ln1_out.row(t), dq.row(t), bg.wq, bg.bq.ptr(),
                                    dln1.data());
            detail::linear_backward(bp.wk, bc.ln1_out.row(t), dk.row(t), bg.wk, bg.bk.ptr(),
                                    dln1.data());
            detail::linear_backward(bp.wv, bc.ln1_out.row(t), dv.row(t), bg.wv, bg.bv.ptr(),
                                    dln1.data());
            // Residual: grad into hidden[l] = dx_mid (identity) + LN1 path.
            T* dxl = dx_mid.row(t);
            detail::layer_norm_backward(dln1.data(), bc.n1.row(t), bc.rstd1[t], bp.ln1_gain.ptr(),
                                        D, dxl, bg.ln1_gain.ptr(), bg.ln1_bias.ptr());
        }
        dx = std::move(dx_mid);
    }

    // Embedding lookup backward.
    for (std::size_t t = 0; t < seq; ++t) {
        const T* d = dx.row(t);
        T* te = g.tok_emb.ptr() + static_cast<std::size_t>(tokens[t]) * D;
        T* pe = g.pos_emb.ptr() + t * D;
        for (std::size_t i = 0; i < D; ++i) {
            te[i] += d[i];
            pe[i] += d[i];
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Decoding and activation capture
// ---------------------------------------------------------------------------

// Argmax decoding; ties break toward the lowest token id. Stops at eos,
// max_new tokens, or the context limit, whichever comes first.
std::vector<int> greedy_decode(const ModelCheckpoint& ckpt, std::span<const int> prompt,
                               int max_new, int eos_id);

struct ActivationSet {
    int layer = 0;
    Mat rows;                         // [n_examples, d_model], last-token states
    std::vector<std::string> labels;  // dataset tag per row
};

// Hidden state after block `layer` (0 = embedding output, n_layers = final
// block) at the last token of each sequence.
ActivationSet capture_activations(const ModelCheckpoint& ckpt,
                                  const std::vector<std::vector<int>>& sequences, int layer,
                                  const std::string& label);

}  // namespace seat
