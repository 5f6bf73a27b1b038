#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seat/checkpoint.hpp"
#include "seat/corpus.hpp"
#include "seat/model.hpp"
#include "seat/sparsity.hpp"
#include "seat/tokenizer.hpp"

namespace seat {

// ---------------------------------------------------------------------------
// Example encoding
// ---------------------------------------------------------------------------

// Teacher-forced next-token layout: tokens = [bos, question..., answer..., eos],
// inputs = tokens[:-1], targets = tokens[1:]. ignore[p] == 1 marks positions
// whose target is still part of the question; losses score answer and eos
// positions only.
struct EncodedExample {
    std::vector<int> tokens;
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<std::uint8_t> ignore;
};

EncodedExample encode_example(const QaRecord& record, const Vocab& vocab, int context_len);

// ---------------------------------------------------------------------------
// Anchoring loss
// ---------------------------------------------------------------------------

// Forward KL(p_base || p_cur), averaged over positions not excluded by
// ignore_mask. When dlogits_cur is given it receives d/d(cur logits) =
// (p_cur - p_base) / kept, zero at excluded rows.
template <typename T>
T kl_term(const MatT<T>& base_logits, const MatT<T>& cur_logits,
          std::span<const std::uint8_t> ignore_mask, MatT<T>* dlogits_cur = nullptr) {
    if (base_logits.rows != cur_logits.rows || base_logits.cols != cur_logits.cols ||
        ignore_mask.size() != cur_logits.rows) {
        throw StructuralError("kl_term: logit shapes or mask length differ");
    }
    std::size_t kept = 0;
    for (auto m : ignore_mask) {
        if (!m) ++kept;
    }
    if (kept == 0) throw ValidationError("kl_term: every position is masked out");
    if (dlogits_cur) *dlogits_cur = MatT<T>(cur_logits.rows, cur_logits.cols);
    const T inv = T(1) / static_cast<T>(kept);
    const std::size_t V = cur_logits.cols;
    std::vector<T> pb(V), pc(V);
    T total = 0;
    for (std::size_t r = 0; r < cur_logits.rows; ++r) {
        if (ignore_mask[r]) continue;
        const T* b = base_logits.row(r);
        const T* c = cur_logits.row(r);
        T bmax = b[0], cmax = c[0];
        for (std::size_t i = 1; i < V; ++i) {
            bmax = std::max(bmax, b[i]);
            cmax = std::max(cmax, c[i]);
        }
        T bden = 0, cden = 0;
        for (std::size_t i = 0; i < V; ++i) {
            pb[i] = std::exp(b[i] - bmax);
            bden += pb[i];
            pc[i] = std::exp(c[i] - cmax);
            cden += pc[i];
        }
        // A NaN logit would otherwise fail the p > 0 guard below and the row
        // would silently contribute zero.
        if (!std::isfinite(static_cast<double>(bden)) ||
            !std::isfinite(static_cast<double>(cden))) {
            throw NumericError("kl_term: non-finite logits at row " + std::to_string(r));
        }
        const T blog = std::log(bden), clog = std::log(cden);
        T row_kl = 0;
        for (std::size_t i = 0; i < V; ++i) {
            const T p = pb[i] / bden;
            // log p_base - log p_cur in shifted form avoids 0*log0 issues for
            // p == 0 by skipping those terms.
            if (p > T(0)) {
                row_kl += p * ((b[i] - bmax - blog) - (c[i] - cmax - clog));
            }
        }
        total += row_kl;
        if (dlogits_cur) {
            T* d = dlogits_cur->row(r);
            for (std::size_t i = 0; i < V; ++i) d[i] = (pc[i] / cden - pb[i] / bden) * inv;
        }
    }
    const T loss = total * inv;
    if (!std::isfinite(static_cast<double>(loss))) throw NumericError("kl_term: non-finite loss");
    return loss;
}

// ---------------------------------------------------------------------------
// Methods and configs
// ---------------------------------------------------------------------------

enum class Method { full_ft, sparse_ft, seat, full_kl_ep, sparse_kl_noep };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
const std::vector<Method>& all_methods();

// Whether the method trains through a sparse mask / adds the anchoring term /
// perturbs the anchoring inputs.
bool method_is_sparse(Method m);
bool method_uses_kl(Method m);
bool method_perturbs(Method m);

struct EpochLog {
    int epoch = 0;
    double loss_ft = 0.0;
    double loss_kl = 0.0;
    double loss_total = 0.0;
};

struct FinetuneConfig {
    Method method = Method::seat;
    float lr = 0.01f;
    int epochs = 500;
    int batch_size = 4;
    float alpha = 1.0f;
    double frozen_fraction = 0.9;
    MaskStrategy strategy = MaskStrategy::random;
    std::uint64_t seed = 7;
};

void validate(const FinetuneConfig& cfg);

struct FinetuneResult {
    ModelCheckpoint model;
    std::optional<SparseMask> mask;  // sparse methods only
    std::vector<EpochLog> log;
};

// Runs the configured method from a frozen copy of `base` as the anchor.
// Randomness streams (mask, shuffle, perturbation) derive independently from
// cfg.seed, so disabling the anchoring term never shifts the others; with
// alpha == 0 the anchoring branch is skipped entirely and sparse/full runs
// reduce bitwise to their plain counterparts.
FinetuneResult finetune(const ModelCheckpoint& base, const CorpusBundle& bundle,
                        const FinetuneConfig& cfg);

struct PretrainConfig {
    float lr = 0.05f;
    int batch_size = 8;
    int max_epochs = 400;
    int check_every = 25;
    std::uint64_t seed = 7;
};

void validate(const PretrainConfig& cfg);

// Called at checkpoints during pretraining; return true to stop early.
using ConvergenceCheck = std::function<bool(const ModelCheckpoint&, int epochs_done)>;

// Trains a fresh model on factual plus alignment data with plain SGD. When a
// convergence check is supplied and never satisfied within max_epochs, throws
// ConvergenceError.
ModelCheckpoint pretrain_base(const ModelConfig& mc, const CorpusBundle& bundle,
                              const PretrainConfig& cfg, ConvergenceCheck check = nullptr,
                              std::vector<EpochLog>* log = nullptr);

}  // namespace seat
