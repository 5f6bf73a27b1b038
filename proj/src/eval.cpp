#include "seat/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "seat/util.hpp"

namespace seat {

double rouge1(const std::string& prediction, const std::string& reference) {
    const auto ref = split_words(reference);
    if (ref.empty()) throw ValidationError("rouge1: reference tokenizes to nothing");
    const auto pred = split_words(prediction);
    std::map<std::string, int> ref_counts;
    for (const auto& w : ref) ++ref_counts[w];
    int hits = 0;
    for (const auto& w : pred) {
        auto it = ref_counts.find(w);
        if (it != ref_counts.end() && it->second > 0) {
            --it->second;
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(ref.size());
}

std::vector<float> sentence_embed(const ModelCheckpoint& base, const std::string& text,
                                  const Vocab& vocab) {
    const auto ids = tokenize(text, vocab);
    if (ids.empty()) throw ValidationError("sentence_embed: text tokenizes to nothing");
    auto cache = forward(base.config, base.params, std::span<const int>(ids));
    const auto& h = cache.hidden.back();
    std::vector<float> out(h.cols, 0.0f);
    for (std::size_t t = 0; t < h.rows; ++t) {
        const float* row = h.row(t);
        for (std::size_t i = 0; i < h.cols; ++i) out[i] += row[i];
    }
    const float inv = 1.0f / static_cast<float>(h.rows);
    for (auto& v : out) v *= inv;
    return out;
}

double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw StructuralError("cosine: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

int eval_threads() {
    const char* env = std::getenv("SEAT_THREADS");
    if (!env || !*env) return 1;
    const long n = std::strtol(env, nullptr, 10);
    return static_cast<int>(std::clamp(n, 1L, 64L));
}

std::vector<std::string> decode_responses(const ModelCheckpoint& ckpt,
                                          const std::vector<std::string>& questions,
                                          const Vocab& vocab, int max_new) {
    std::vector<std::string> out(questions.size());
    auto work = [&](std::size_t begin, std::size_t step) {
        for (std::size_t i = begin; i < questions.size(); i += step) {
            std::vector<int> prompt{vocab.bos_id};
            const auto q = tokenize(questions[i], vocab);
            prompt.insert(prompt.end(), q.begin(), q.end());
            const auto ids = greedy_decode(ckpt, prompt, max_new, vocab.eos_id);
            out[i] = detokenize(ids, vocab);
        }
    };
    const int nthreads = std::min<int>(eval_threads(), static_cast<int>(questions.size()));
    if (nthreads <= 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(nthreads));
        for (int t = 0; t < nthreads; ++t) {
            pool.emplace_back(work, static_cast<std::size_t>(t),
                              static_cast<std::size_t>(nthreads));
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

double idk_score_responses(const std::vector<std::string>& responses,
                           const std::vector<std::string>& templates,
                           const ModelCheckpoint& base, const Vocab& vocab) {
    if (responses.empty()) throw ValidationError("idk_score: empty question set");
    if (templates.empty()) throw ValidationError("idk_score: empty template list");
    std::vector<std::vector<float>> temb;
    temb.reserve(templates.size());
    for (const auto& t : templates) temb.push_back(sentence_embed(base, t, vocab));
    double total = 0.0;
    for (const auto& r : responses) {
        if (tokenize(r, vocab).empty()) continue;  // empty response contributes 0
        const auto e = sentence_embed(base, r, vocab);
        double best = -1.0;
        for (const auto& t : temb) best = std::max(best, cosine(e, t));
        total += best;
    }
    return std::clamp(total / static_cast<double>(responses.size()), 0.0, 1.0);
}

double idk_score(const ModelCheckpoint& ckpt, const ModelCheckpoint& base,
                 const std::vector<std::string>& questions,
                 const std::vector<std::string>& templates, const Vocab& vocab, int max_new) {
    if (questions.empty()) throw ValidationError("idk_score: empty question set");
    return idk_score_responses(decode_responses(ckpt, questions, vocab, max_new), templates, base,
                               vocab);
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

namespace {

// Cyclic Jacobi eigensolver for a symmetric matrix, double precision.
// Returns eigenvalues and row eigenvectors, unsorted.
void jacobi_eigen(std::vector<double>& a, std::size_t d, std::vector<double>& eigvals,
                  std::vector<double>& eigvecs) {
    eigvecs.assign(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i) eigvecs[i * d + i] = 1.0;
    const int max_sweeps = 100;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
        }
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < d; ++p) {
            for (std::size_t q = p + 1; q < d; ++q) {
                const double apq = a[p * d + q];
                if (std::fabs(apq) < 1e-300) continue;
                const double app = a[p * d + p], aqq = a[q * d + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < d; ++i) {
                    const double aip = a[i * d + p], aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double api = a[p * d + i], aqi = a[q * d + i];
                    a[p * d + i] = c * api - s * aqi;
                    a[q * d + i] = s * api + c * aqi;
                }
                for (std::size_t i = 0; i < d; ++i) {
                    const double vip = eigvecs[p * d + i], viq = eigvecs[q * d + i];
                    eigvecs[p * d + i] = c * vip - s * viq;
                    eigvecs[q * d + i] = s * vip + c * viq;
                }
            }
        }
    }
    eigvals.resize(d);
    for (std::size_t i = 0; i < d; ++i) eigvals[i] = a[i * d + i];
}

}  // namespace

PcaBasis fit_pca(const ActivationSet& acts, int k) {
    const std::size_t n = acts.rows.rows, d = acts.rows.cols;
    if (k < 1) throw ValidationError("fit_pca: k must be >= 1");
    if (n < static_cast<std::size_t>(k)) {
        throw ValidationError("fit_pca: need at least k examples, got " + std::to_string(n));
    }
    if (n < 2) throw ValidationError("fit_pca: need at least 2 examples for a covariance");

    PcaBasis basis;
    basis.mean.assign(d, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const float* row = acts.rows.row(r);
        for (std::size_t i = 0; i < d; ++i) basis.mean[i] += row[i];
    }
    for (auto& m : basis.mean) m /= static_cast<double>(n);

    std::vector<double> cov(d * d, 0.0);
    std::vector<double> centered(d);
    for (std::size_t r = 0; r < n; ++r) {
        const float* row = acts.rows.row(r);
        for (std::size_t i = 0; i < d; ++i) centered[i] = row[i] - basis.mean[i];
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = i; j < d; ++j) cov[i * d + j] += centered[i] * centered[j];
        }
    }
    const double inv = 1.0 / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            cov[i * d + j] *= inv;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    std::vector<double> eigvals, eigvecs;
    jacobi_eigen(cov, d, eigvals, eigvecs);

    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return eigvals[a] > eigvals[b]; });

    const double max_eig = eigvals.empty() ? 0.0 : std::max(0.0, eigvals[order[0]]);
    std::size_t rank = 0;
    for (std::size_t i = 0; i < d; ++i) {
        if (eigvals[order[i]] > 1e-12 * std::max(1.0, max_eig)) ++rank;
    }
    basis.rank_deficient = static_cast<std::size_t>(k) > rank;

    basis.components = MatT<double>(static_cast<std::size_t>(k), d);
    basis.explained_variance.resize(static_cast<std::size_t>(k));
    for (std::size_t c = 0; c < static_cast<std::size_t>(k); ++c) {
        const std::size_t src = order[c];
        double* row = basis.components.row(c);
        for (std::size_t i = 0; i < d; ++i) row[i] = eigvecs[src * d + i];
        // Sign rule: the entry with the largest magnitude becomes positive.
        std::size_t arg = 0;
        for (std::size_t i = 1; i < d; ++i) {
            if (std::fabs(row[i]) > std::fabs(row[arg])) arg = i;
        }
        if (row[arg] < 0.0) {
            for (std::size_t i = 0; i < d; ++i) row[i] = -row[i];
        }
        basis.explained_variance[c] = std::max(0.0, eigvals[src]);
    }
    return basis;
}

MatT<double> project(const PcaBasis& basis, const ActivationSet& acts) {
    const std::size_t d = basis.mean.size(), k = basis.components.rows;
    if (acts.rows.cols != d) throw StructuralError("project: dimension mismatch");
    MatT<double> out(acts.rows.rows, k);
    std::vector<double> centered(d);
    for (std::size_t r = 0; r < acts.rows.rows; ++r) {
        const float* row = acts.rows.row(r);
        for (std::size_t i = 0; i < d; ++i) centered[i] = row[i] - basis.mean[i];
        double* o = out.row(r);
        for (std::size_t c = 0; c < k; ++c) {
            const double* comp = basis.components.row(c);
            double acc = 0.0;
            for (std::size_t i = 0; i < d; ++i) acc += centered[i] * comp[i];
            o[c] = acc;
        }
    }
    return out;
}

double separation(const MatT<double>& a, const MatT<double>& b) {
    if (a.cols != b.cols) throw StructuralError("separation: dimension mismatch");
    if (a.rows == 0 || b.rows == 0) throw ValidationError("separation: empty group");
    const std::size_t k = a.cols;
    std::vector<double> ca(k, 0.0), cb(k, 0.0);
    for (std::size_t r = 0; r < a.rows; ++r) {
        for (std::size_t i = 0; i < k; ++i) ca[i] += a.row(r)[i];
    }
    for (std::size_t r = 0; r < b.rows; ++r) {
        for (std::size_t i = 0; i < k; ++i) cb[i] += b.row(r)[i];
    }
    for (auto& v : ca) v /= static_cast<double>(a.rows);
    for (auto& v : cb) v /= static_cast<double>(b.rows);
    double dist2 = 0.0;
    for (std::size_t i = 0; i < k; ++i) dist2 += (ca[i] - cb[i]) * (ca[i] - cb[i]);
    if (dist2 == 0.0) return 0.0;
    double within = 0.0;
    for (std::size_t r = 0; r < a.rows; ++r) {
        for (std::size_t i = 0; i < k; ++i) {
            within += (a.row(r)[i] - ca[i]) * (a.row(r)[i] - ca[i]);
        }
    }
    for (std::size_t r = 0; r < b.rows; ++r) {
        for (std::size_t i = 0; i < k; ++i) {
            within += (b.row(r)[i] - cb[i]) * (b.row(r)[i] - cb[i]);
        }
    }
    const double rms = std::sqrt(within / static_cast<double>(a.rows + b.rows));
    if (rms == 0.0) return std::numeric_limits<double>::infinity();
    return std::sqrt(dist2) / rms;
}

// ---------------------------------------------------------------------------
// Full evaluation
// ---------------------------------------------------------------------------

nlohmann::json to_json(const EvalReport& r) {
    return nlohmann::json{{"ft_score", r.ft_score},
                          {"idk_unverifiable", r.idk_unverifiable},
                          {"idk_unseen", r.idk_unseen},
                          {"separation_per_layer", r.separation_per_layer},
                          {"method", r.method},
                          {"seed", r.seed},
                          {"corpus_hash", r.corpus_hash}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.ft_score = j.at("ft_score").get<double>();
        r.idk_unverifiable = j.at("idk_unverifiable").get<double>();
        r.idk_unseen = j.at("idk_unseen").get<double>();
        r.separation_per_layer = j.at("separation_per_layer").get<std::vector<double>>();
        r.method = j.at("method").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.corpus_hash = j.at("corpus_hash").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw StructuralError(std::string{"bad eval report: "} + e.what());
    }
    return r;
}

namespace {

const std::vector<QaRecord>& dataset_by_name(const CorpusBundle& bundle, const std::string& name) {
    if (name == "finetune") return bundle.finetune;
    if (name == "factual") return bundle.factual;
    if (name == "alignment") return bundle.alignment;
    if (name == "unseen_eval") return bundle.unseen_eval;
    throw ValidationError("unknown dataset name: " + name);
}

std::vector<std::string> questions_of(const std::vector<QaRecord>& records) {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.question);
    return out;
}

std::vector<std::vector<int>> prompts_of(const std::vector<std::string>& questions,
                                         const Vocab& vocab) {
    std::vector<std::vector<int>> out;
    out.reserve(questions.size());
    for (const auto& q : questions) {
        std::vector<int> ids{vocab.bos_id};
        const auto t = tokenize(q, vocab);
        ids.insert(ids.end(), t.begin(), t.end());
        out.push_back(std::move(ids));
    }
    return out;
}

void check_vocab_compat(const ModelCheckpoint& ckpt, const CorpusBundle& bundle,
                        const std::string& which) {
    if (ckpt.config.vocab_size != static_cast<int>(bundle.vocab.size())) {
        throw ValidationError(which + " checkpoint vocab_size does not match corpus vocabulary");
    }
    if (!ckpt.provenance.corpus.empty() && ckpt.provenance.corpus != vocab_hash(bundle)) {
        throw ValidationError(which + " checkpoint was trained on a different vocabulary (hash " +
                              ckpt.provenance.corpus + " vs " + vocab_hash(bundle) + ")");
    }
}

}  // namespace

EvalReport evaluate(const ModelCheckpoint& ckpt, const ModelCheckpoint& base,
                    const CorpusBundle& bundle, const EvalOptions& opts) {
    check_vocab_compat(ckpt, bundle, "model");
    check_vocab_compat(base, bundle, "base");

    EvalReport report;
    report.method = ckpt.provenance.method;
    report.seed = opts.seed;
    report.corpus_hash = vocab_hash(bundle);

    const auto& ft_set = dataset_by_name(bundle, opts.ft_dataset);
    if (ft_set.empty()) throw ValidationError("dataset " + opts.ft_dataset + " is empty");
    const auto ft_responses =
        decode_responses(ckpt, questions_of(ft_set), bundle.vocab, opts.max_new);
    double rouge_sum = 0.0;
    for (std::size_t i = 0; i < ft_set.size(); ++i) {
        rouge_sum += rouge1(ft_responses[i], ft_set[i].answer);
    }
    report.ft_score = rouge_sum / static_cast<double>(ft_set.size());

    const auto templates = idk_reference_strings(bundle);
    report.idk_unverifiable =
        idk_score(ckpt, base, bundle.unverifiable, templates, bundle.vocab, opts.max_new);
    report.idk_unseen = idk_score(ckpt, base, questions_of(bundle.unseen_eval), templates,
                                  bundle.vocab, opts.max_new);

    const auto unv_prompts = prompts_of(bundle.unverifiable, bundle.vocab);
    const auto fact_prompts = prompts_of(questions_of(bundle.factual), bundle.vocab);
    const auto unseen_prompts = prompts_of(questions_of(bundle.unseen_eval), bundle.vocab);
    for (int layer = 0; layer <= ckpt.config.n_layers; ++layer) {
        const auto basis =
            fit_pca(capture_activations(ckpt, unv_prompts, layer, "unverifiable"), opts.pca_k);
        const auto pa = project(basis, capture_activations(ckpt, fact_prompts, layer, "factual"));
        const auto pb =
            project(basis, capture_activations(ckpt, unseen_prompts, layer, "unseen_eval"));
        report.separation_per_layer.push_back(separation(pa, pb));
    }
    return report;
}

std::vector<LayerProjection> projection_dump(const ModelCheckpoint& ckpt,
                                             const CorpusBundle& bundle, int pca_k) {
    const auto unv_prompts = prompts_of(bundle.unverifiable, bundle.vocab);
    const auto fact_prompts = prompts_of(questions_of(bundle.factual), bundle.vocab);
    const auto unseen_prompts = prompts_of(questions_of(bundle.unseen_eval), bundle.vocab);
    std::vector<LayerProjection> out;
    for (int layer = 0; layer <= ckpt.config.n_layers; ++layer) {
        const auto basis =
            fit_pca(capture_activations(ckpt, unv_prompts, layer, "unverifiable"), pca_k);
        LayerProjection lp;
        lp.layer = layer;
        auto add = [&](const std::string& tag, const std::vector<std::vector<int>>& prompts) {
            const auto proj = project(basis, capture_activations(ckpt, prompts, layer, tag));
            for (std::size_t r = 0; r < proj.rows; ++r) {
                lp.dataset.push_back(tag);
                lp.pc1.push_back(proj.row(r)[0]);
                lp.pc2.push_back(proj.rows > 0 && proj.cols > 1 ? proj.row(r)[1] : 0.0);
            }
        };
        add("unverifiable", unv_prompts);
        add("factual", fact_prompts);
        add("unseen_eval", unseen_prompts);
        out.push_back(std::move(lp));
    }
    return out;
}

std::string projection_csv(const LayerProjection& p) {
    std::ostringstream os;
    os << "dataset,pc1,pc2\n";
    os.precision(17);
    for (std::size_t i = 0; i < p.dataset.size(); ++i) {
        os << p.dataset[i] << "," << p.pc1[i] << "," << p.pc2[i] << "\n";
    }
    return os.str();
}

std::string projection_svg(const LayerProjection& p) {
    const int w = 480, h = 480, pad = 40;
    double lo1 = 0, hi1 = 1, lo2 = 0, hi2 = 1;
    if (!p.pc1.empty()) {
        lo1 = *std::min_element(p.pc1.begin(), p.pc1.end());
        hi1 = *std::max_element(p.pc1.begin(), p.pc1.end());
        lo2 = *std::min_element(p.pc2.begin(), p.pc2.end());
        hi2 = *std::max_element(p.pc2.begin(), p.pc2.end());
    }
    if (hi1 - lo1 < 1e-12) hi1 = lo1 + 1.0;
    if (hi2 - lo2 < 1e-12) hi2 = lo2 + 1.0;
    auto sx = [&](double v) { return pad + (v - lo1) / (hi1 - lo1) * (w - 2 * pad); };
    auto sy = [&](double v) { return h - pad - (v - lo2) / (hi2 - lo2) * (h - 2 * pad); };
    auto color = [](const std::string& tag) {
        if (tag == "factual") return "#1b7837";
        if (tag == "unseen_eval") return "#d73027";
        return "#4575b4";
    };
    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
       << "\">\n";
    os << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << pad << "\" y=\"20\" font-size=\"14\">layer " << p.layer
       << " activation projection</text>\n";
    const char* tags[] = {"unverifiable", "factual", "unseen_eval"};
    for (int t = 0; t < 3; ++t) {
        os << "<circle cx=\"" << (pad + 8) << "\" cy=\"" << (h - 22 + 0) - t * 14 << "\" r=\"4\" fill=\""
           << color(tags[t]) << "\"/><text x=\"" << (pad + 18) << "\" y=\"" << (h - 18) - t * 14
           << "\" font-size=\"11\">" << tags[t] << "</text>\n";
    }
    for (std::size_t i = 0; i < p.dataset.size(); ++i) {
        os << "<circle cx=\"" << sx(p.pc1[i]) << "\" cy=\"" << sy(p.pc2[i])
           << "\" r=\"3\" fill=\"" << color(p.dataset[i]) << "\" fill-opacity=\"0.75\"/>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace seat
