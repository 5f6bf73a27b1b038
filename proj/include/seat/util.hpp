#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace seat {

// FNV-1a 64-bit content hash. Used for manifests, provenance tags and
// idempotency checks; not a cryptographic hash.
std::uint64_t fnv1a64(std::string_view bytes);

std::string to_hex(std::uint64_t v);

inline std::string hash_hex(std::string_view bytes) { return to_hex(fnv1a64(bytes)); }

// splitmix64 finalizer; stateless mixing for seed derivation.
std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent RNG seed from (seed, label[, index]). Each logical
// randomness stream in the pipeline gets its own label so that adding or
// skipping one stream never shifts another.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index);

std::string read_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string file_hash_hex(const std::filesystem::path& path);

}  // namespace seat
