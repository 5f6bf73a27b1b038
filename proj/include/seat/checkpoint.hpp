#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "seat/model.hpp"

namespace seat {

// Binary container shared by model and mask files:
//   8-byte magic, u32 little-endian version, u64 little-endian header length,
//   UTF-8 JSON header, then raw little-endian payload described by the header.
inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'A', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Container {
    std::uint32_t version = kCheckpointVersion;
    nlohmann::json header;
    std::vector<std::uint8_t> payload;
};

std::vector<std::uint8_t> container_bytes(const Container& c);
Container parse_container(const std::vector<std::uint8_t>& bytes, const std::string& origin);
Container read_container(const std::filesystem::path& path);

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& origin);

nlohmann::json to_json(const Provenance& p);
Provenance provenance_from_json(const nlohmann::json& j);

// Serialization is canonical: identical checkpoints produce identical bytes.
std::vector<std::uint8_t> checkpoint_bytes(const ModelCheckpoint& ckpt);
void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path);
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);

// FNV-1a over the canonical byte serialization, as a hex string.
std::string checkpoint_hash(const ModelCheckpoint& ckpt);

}  // namespace seat
