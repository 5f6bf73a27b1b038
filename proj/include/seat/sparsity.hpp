#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "seat/model.hpp"

namespace seat {

enum class MaskStrategy { random, magnitude };

std::string to_string(MaskStrategy s);
MaskStrategy mask_strategy_from_string(const std::string& s);

// Trainability mask over the full parameter set. bits == 1 means trainable.
// Only 2-D tensors (weight matrices and embeddings) are maskable; gains and
// biases stay trainable regardless of ratio and are excluded from the budget.
struct SparseMask {
    ModelConfig config;
    ParamsT<std::uint8_t> bits;
    double ratio = 0.0;  // requested frozen fraction of maskable coordinates
    MaskStrategy strategy = MaskStrategy::random;
    std::uint64_t seed = 0;
};

inline bool is_maskable(const std::vector<std::size_t>& shape) { return shape.size() == 2; }

std::size_t maskable_count(const ModelConfig& cfg);

// Number of trainable maskable coordinates (popcount over 2-D tensors).
std::size_t trainable_count(const SparseMask& mask);

// Builds a mask freezing `ratio` of the maskable coordinates. The trainable
// budget k = round((1-ratio)*maskable) holds exactly; the random strategy
// apportions k across tensors proportionally by largest remainder, the
// magnitude strategy keeps the k largest |value| entries globally.
SparseMask build_mask(const ModelConfig& cfg, const Params& params, double ratio,
                      MaskStrategy strategy, std::uint64_t seed);

SparseMask dense_mask(const ModelConfig& cfg);

// SGD step writing only trainable coordinates. A non-finite gradient on a
// trainable coordinate raises NumericError naming the parameter; frozen
// coordinates are never read or written.
void masked_update(Params& params, const ParamsT<float>& grads, const SparseMask& mask, float lr);

struct FrozenReport {
    std::size_t violations = 0;
    std::string first;  // "name[flat_index]" of the first drifted coordinate
    bool ok() const { return violations == 0; }
};

// Bitwise comparison of frozen coordinates between two parameter sets.
FrozenReport assert_frozen(const Params& before, const Params& after, const SparseMask& mask);

void save_mask(const SparseMask& mask, const std::filesystem::path& path);
SparseMask load_mask(const std::filesystem::path& path);

}  // namespace seat
