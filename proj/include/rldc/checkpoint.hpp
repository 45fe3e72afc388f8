#pragma once

// Checkpoint file layout (all integers little-endian):
//
//   "RLDC" | u8 version | u32 manifest length | UTF-8 JSON manifest | blobs
//
// The manifest carries the NetworkSpec, training metadata and a blob table
// {name, shape, offset, count}; offsets are bytes from the start of the blob
// region, which holds IEEE-754 float32 values row-major per blob.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rldc/network.hpp"

namespace rldc {

inline constexpr std::uint8_t kCheckpointVersion = 1;

struct WeightBlob {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::uint8_t version = kCheckpointVersion;
  NetworkSpec spec;
  std::vector<WeightBlob> blobs;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

// Weights are rounded to float32 here; this is the serialized precision.
Checkpoint make_checkpoint(const Network& network, nlohmann::json metadata = nlohmann::json::object());
// Validates blob names and shapes against the spec.
Network network_from(const Checkpoint& checkpoint);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Convenience wrappers around make_checkpoint / network_from.
void save(const Network& network, const std::filesystem::path& path,
          nlohmann::json metadata = nlohmann::json::object());
Network load(const std::filesystem::path& path);

}  // namespace rldc
