#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "seat/checkpoint.hpp"
#include "seat/corpus.hpp"
#include "seat/model.hpp"

namespace seat {

// Unigram recall: |multiset intersection of whitespace tokens| / |reference
// tokens|. Throws when the reference tokenizes to nothing.
double rouge1(const std::string& prediction, const std::string& reference);

// Mean-pooled final-block hidden states (before the output layer norm) of the
// frozen base model over the text's tokens; no bos/eos framing. Throws when
// the text tokenizes to nothing.
std::vector<float> sentence_embed(const ModelCheckpoint& base, const std::string& text,
                                  const Vocab& vocab);

// In [-1,1]; 0 when either vector has zero norm.
double cosine(std::span<const float> a, std::span<const float> b);

// Greedy responses for [bos] + question prompts, fanned out across
// SEAT_THREADS workers with index-ordered collection.
std::vector<std::string> decode_responses(const ModelCheckpoint& ckpt,
                                          const std::vector<std::string>& questions,
                                          const Vocab& vocab, int max_new);

// Max-over-templates cosine between each embedded response and the embedded
// ignorance templates; empty responses score 0. Returns the mean clipped to
// [0,1].
double idk_score_responses(const std::vector<std::string>& responses,
                           const std::vector<std::string>& templates,
                           const ModelCheckpoint& base, const Vocab& vocab);

double idk_score(const ModelCheckpoint& ckpt, const ModelCheckpoint& base,
                 const std::vector<std::string>& questions,
                 const std::vector<std::string>& templates, const Vocab& vocab, int max_new = 24);

struct PcaBasis {
    std::vector<double> mean;            // [d]
    MatT<double> components;             // [k, d], orthonormal rows
    std::vector<double> explained_variance;  // [k], non-increasing, >= 0
    bool rank_deficient = false;         // k exceeded the data rank
};

// Top-k eigenvectors of the sample covariance (divisor n-1) of the activation
// rows, sign-normalized so each row's largest-magnitude entry is positive.
PcaBasis fit_pca(const ActivationSet& acts, int k);

// (rows - mean) . componentsT
MatT<double> project(const PcaBasis& basis, const ActivationSet& acts);

// Centroid distance over pooled RMS within-group radius; 0 iff the centroids
// coincide (infinite for distinct centroids with zero radius).
double separation(const MatT<double>& projected_a, const MatT<double>& projected_b);

struct EvalReport {
    double ft_score = 0.0;
    double idk_unverifiable = 0.0;
    double idk_unseen = 0.0;
    std::vector<double> separation_per_layer;  // layers 0..n_layers
    std::string method;
    std::uint64_t seed = 0;
    std::string corpus_hash;
};

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

struct EvalOptions {
    std::string ft_dataset = "finetune";  // dataset scored by ft_score
    int max_new = 24;
    int pca_k = 2;
    std::uint64_t seed = 0;  // stamped into the report
};

// Full measurement pass: FT score on the chosen dataset, IDK on unverifiable
// and unseen questions, and per-layer separation of factual vs unseen
// activations in the unverifiable-fitted PCA plane.
EvalReport evaluate(const ModelCheckpoint& ckpt, const ModelCheckpoint& base,
                    const CorpusBundle& bundle, const EvalOptions& opts = {});

struct LayerProjection {
    int layer = 0;
    // Parallel vectors: dataset tag per point plus its 2-D coordinates.
    std::vector<std::string> dataset;
    std::vector<double> pc1, pc2;
};

// Projections backing the report's separation values, for CSV/SVG export.
std::vector<LayerProjection> projection_dump(const ModelCheckpoint& ckpt,
                                             const CorpusBundle& bundle, int pca_k = 2);

std::string projection_csv(const LayerProjection& p);
std::string projection_svg(const LayerProjection& p);

// Worker cap from SEAT_THREADS, default 1, clamped to [1, 64].
int eval_threads();

}  // namespace seat
