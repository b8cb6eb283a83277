#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sdd/model.hpp"

namespace sdd {

/// On-disk layout (all integers little-endian):
///   magic "SDDCKPT\0" | u32 version | u64 config fingerprint
///   | u32 len + model config JSON | u64 step | u32 len + metadata JSON
///   | u32 tensor count | per tensor: u32 len + name, u32 ndim, u64 dims[], f32 data[]
/// Optimizer moments are stored as ordinary tensors named "adam.m/<name>"
/// and "adam.v/<name>".
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ModelConfig config;
  std::uint64_t step = 0;
  std::string metadata = "{}";
  ParameterSet<float> params;
  ParameterSet<float> adam_m;  // empty when no optimizer state is stored
  ParameterSet<float> adam_v;
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws if the checkpoint was produced for a different model config.
void require_fingerprint(const Checkpoint& ckpt, const ModelConfig& expected);

}  // namespace sdd
