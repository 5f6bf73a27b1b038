#include "seat/trainer.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "seat/util.hpp"

namespace seat {

EncodedExample encode_example(const QaRecord& record, const Vocab& vocab, int context_len) {
    const auto q = tokenize(record.question, vocab);
    const auto a = tokenize(record.answer, vocab);
    if (q.empty()) throw ValidationError("encode_example: empty question");
    if (a.empty()) throw ValidationError("encode_example: empty answer");
    EncodedExample e;
    e.tokens.reserve(q.size() + a.size() + 2);
    e.tokens.push_back(vocab.bos_id);
    e.tokens.insert(e.tokens.end(), q.begin(), q.end());
    e.tokens.insert(e.tokens.end(), a.begin(), a.end());
    e.tokens.push_back(vocab.eos_id);
    if (e.tokens.size() - 1 > static_cast<std::size_t>(context_len)) {
        throw ValidationError("encode_example: sequence of " + std::to_string(e.tokens.size() - 1) +
                              " positions exceeds context_len " + std::to_string(context_len));
    }
    e.inputs.assign(e.tokens.begin(), e.tokens.end() - 1);
    e.targets.assign(e.tokens.begin() + 1, e.tokens.end());
    e.ignore.assign(e.inputs.size(), 0);
    for (std::size_t p = 0; p < q.size(); ++p) e.ignore[p] = 1;
    return e;
}

std::string to_string(Method m) {
    switch (m) {
        case Method::full_ft: return "full_ft";
        case Method::sparse_ft: return "sparse_ft";
        case Method::seat: return "seat";
        case Method::full_kl_ep: return "full_kl_ep";
        case Method::sparse_kl_noep: return "sparse_kl_noep";
    }
    throw StructuralError("unknown method enum value");
}

Method method_from_string(const std::string& s) {
    for (Method m : all_methods()) {
        if (to_string(m) == s) return m;
    }
    throw ValidationError("unknown method: " + s);
}

const std::vector<Method>& all_methods() {
    static const std::vector<Method> methods = {Method::full_ft, Method::sparse_ft, Method::seat,
                                               Method::full_kl_ep, Method::sparse_kl_noep};
    return methods;
}

bool method_is_sparse(Method m) {
    return m == Method::sparse_ft || m == Method::seat || m == Method::sparse_kl_noep;
}

bool method_uses_kl(Method m) {
    return m == Method::seat || m == Method::full_kl_ep || m == Method::sparse_kl_noep;
}

bool method_perturbs(Method m) { return m == Method::seat || m == Method::full_kl_ep; }

void validate(const FinetuneConfig& cfg) {
    if (!(cfg.lr > 0.0f) || !std::isfinite(cfg.lr)) {
        throw ValidationError("finetune: lr must be positive and finite");
    }
    if (cfg.epochs < 0) throw ValidationError("finetune: epochs must be >= 0");
    if (cfg.batch_size < 1) throw ValidationError("finetune: batch_size must be >= 1");
    if (!(cfg.alpha >= 0.0f) || !std::isfinite(cfg.alpha)) {
        throw ValidationError("finetune: alpha must be >= 0 and finite");
    }
    if (!(cfg.frozen_fraction >= 0.0 && cfg.frozen_fraction <= 1.0)) {
        throw ValidationError("finetune: frozen_fraction must lie in [0,1]");
    }
}

void validate(const PretrainConfig& cfg) {
    if (!(cfg.lr > 0.0f) || !std::isfinite(cfg.lr)) {
        throw ValidationError("pretrain: lr must be positive and finite");
    }
    if (cfg.batch_size < 1) throw ValidationError("pretrain: batch_size must be >= 1");
    if (cfg.max_epochs < 1) throw ValidationError("pretrain: max_epochs must be >= 1");
    if (cfg.check_every < 1) throw ValidationError("pretrain: check_every must be >= 1");
}

namespace {

void add_scaled(Params& acc, const ParamsT<float>& g, float scale) {
    std::vector<TensorT<float>*> dst;
    for_each_param(acc, [&](const std::string&, TensorT<float>& t) { dst.push_back(&t); });
    std::size_t i = 0;
    for_each_param(g, [&](const std::string&, const TensorT<float>& t) {
        auto& d = dst[i++]->data;
        for (std::size_t j = 0; j < d.size(); ++j) d[j] += scale * t.data[j];
    });
}

void scale_params(Params& acc, float s) {
    for_each_param(acc, [&](const std::string&, TensorT<float>& t) {
        for (auto& v : t.data) v *= s;
    });
}

struct KlContext {
    const Params* anchor = nullptr;
    const std::vector<EncodedExample>* examples = nullptr;
    float alpha = 0.0f;
};

// One optimizer step over the given example indices. Per-example gradients
// (CE plus alpha times the anchoring term when active) are summed in batch
// order, averaged, then applied through the mask. Returns summed losses.
std::pair<double, double> batch_step(const ModelConfig& mc, Params& params, const SparseMask& mask,
                                     const std::vector<EncodedExample>& examples,
                                     std::span<const std::size_t> batch, float lr,
                                     const KlContext* kl) {
    Params grad = make_params<float>(mc);
    double sum_ce = 0.0, sum_kl = 0.0;
    for (std::size_t idx : batch) {
        const EncodedExample& e = examples[idx];
        auto cache = forward(mc, params, std::span<const int>(e.inputs));
        MatT<float> dlogits;
        sum_ce += loss_ce(cache.logits, std::span<const int>(e.targets),
                          std::span<const std::uint8_t>(e.ignore), &dlogits);
        add_scaled(grad, backward(mc, params, std::span<const int>(e.inputs), cache, dlogits),
                   1.0f);
        if (kl) {
            const EncodedExample& ke = (*kl->examples)[idx];
            auto base_cache = forward(mc, *kl->anchor, std::span<const int>(ke.inputs));
            auto cur_cache = forward(mc, params, std::span<const int>(ke.inputs));
            MatT<float> dkl;
            sum_kl += kl_term(base_cache.logits, cur_cache.logits,
                              std::span<const std::uint8_t>(ke.ignore), &dkl);
            add_scaled(grad,
                       backward(mc, params, std::span<const int>(ke.inputs), cur_cache, dkl),
                       kl->alpha);
        }
    }
    scale_params(grad, 1.0f / static_cast<float>(batch.size()));
    masked_update(params, grad, mask, lr);
    return {sum_ce, sum_kl};
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

}  // namespace

FinetuneResult finetune(const ModelCheckpoint& base, const CorpusBundle& bundle,
                        const FinetuneConfig& cfg) {
    validate(cfg);
    const ModelConfig& mc = base.config;
    if (mc.vocab_size != static_cast<int>(bundle.vocab.size())) {
        throw ValidationError("finetune: model vocab_size does not match corpus vocabulary");
    }
    if (bundle.finetune.empty()) throw ValidationError("finetune: no examples in dataset");

    SparseMask mask =
        method_is_sparse(cfg.method)
            ? build_mask(mc, base.params, cfg.frozen_fraction, cfg.strategy,
                         derive_seed(cfg.seed, "mask"))
            : dense_mask(mc);

    std::vector<EncodedExample> examples;
    examples.reserve(bundle.finetune.size());
    for (const auto& r : bundle.finetune) {
        examples.push_back(encode_example(r, bundle.vocab, mc.context_len));
    }

    FinetuneResult res;
    res.model.config = mc;
    res.model.params = base.params;
    res.model.provenance =
        Provenance{to_string(cfg.method), checkpoint_hash(base), vocab_hash(bundle)};
    res.model.step = base.step;

    const bool kl_active = method_uses_kl(cfg.method) && cfg.alpha != 0.0f;
    const std::size_t n = examples.size();
    std::vector<EncodedExample> kl_examples;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffled_order(n, derive_seed(cfg.seed, "shuffle", epoch));
        KlContext ctx;
        const KlContext* klp = nullptr;
        if (kl_active) {
            if (method_perturbs(cfg.method)) {
                auto pert = perturb_entities(bundle.finetune, bundle.perturb_pool,
                                             derive_seed(cfg.seed, "perturb", epoch));
                kl_examples.clear();
                for (const auto& r : pert.records) {
                    kl_examples.push_back(encode_example(r, bundle.vocab, mc.context_len));
                }
            } else if (epoch == 0) {
                kl_examples = examples;  // anchoring on the unperturbed inputs
            }
            ctx = KlContext{&base.params, &kl_examples, cfg.alpha};
            klp = &ctx;
        }
        double sum_ce = 0.0, sum_kl = 0.0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(n, begin + static_cast<std::size_t>(cfg.batch_size));
            auto [ce, klv] = batch_step(mc, res.model.params, mask, examples,
                                        std::span<const std::size_t>(order).subspan(begin, end - begin),
                                        cfg.lr, klp);
            sum_ce += ce;
            sum_kl += klv;
            ++res.model.step;
        }
        EpochLog el;
        el.epoch = epoch;
        el.loss_ft = sum_ce / static_cast<double>(n);
        el.loss_kl = kl_active ? sum_kl / static_cast<double>(n) : 0.0;
        el.loss_total = el.loss_ft + static_cast<double>(cfg.alpha) * el.loss_kl;
        res.log.push_back(el);
    }
    if (method_is_sparse(cfg.method)) res.mask = std::move(mask);
    return res;
}

ModelCheckpoint pretrain_base(const ModelConfig& mc, const CorpusBundle& bundle,
                              const PretrainConfig& cfg, ConvergenceCheck check,
                              std::vector<EpochLog>* log) {
    validate(mc);
    validate(cfg);
    if (mc.vocab_size != static_cast<int>(bundle.vocab.size())) {
        throw ValidationError("pretrain: model vocab_size does not match corpus vocabulary");
    }
    std::vector<EncodedExample> examples;
    for (const auto& r : bundle.factual) {
        examples.push_back(encode_example(r, bundle.vocab, mc.context_len));
    }
    for (const auto& r : bundle.alignment) {
        examples.push_back(encode_example(r, bundle.vocab, mc.context_len));
    }
    if (examples.empty()) throw ValidationError("pretrain: no training examples");

    ModelCheckpoint ckpt;
    ckpt.config = mc;
    ckpt.params = init_params(mc);
    ckpt.provenance = Provenance{"pretrain", "", vocab_hash(bundle)};
    const SparseMask dense = dense_mask(mc);
    const std::size_t n = examples.size();
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto order = shuffled_order(n, derive_seed(cfg.seed, "pretrain.shuffle", epoch));
        double sum_ce = 0.0;
        for (std::size_t begin = 0; begin < n; begin += cfg.batch_size) {
            const std::size_t end = std::min(n, begin + static_cast<std::size_t>(cfg.batch_size));
            auto [ce, _] = batch_step(mc, ckpt.params, dense, examples,
                                      std::span<const std::size_t>(order).subspan(begin, end - begin),
                                      cfg.lr, nullptr);
            sum_ce += ce;
            ++ckpt.step;
        }
        if (log) {
            EpochLog el;
            el.epoch = epoch;
            el.loss_ft = sum_ce / static_cast<double>(n);
            el.loss_total = el.loss_ft;
            log->push_back(el);
        }
        if (check && (epoch + 1) % cfg.check_every == 0 && check(ckpt, epoch + 1)) {
            return ckpt;
        }
    }
    if (check) {
        throw ConvergenceError("pretraining did not reach target metrics within " +
                               std::to_string(cfg.max_epochs) + " epochs");
    }
    return ckpt;
}

}  // namespace seat
