#pragma once

// Checkpoint file, little-endian:
//   "DACK" | u32 version | u32 meta_len | meta JSON (UTF-8)
//   | u32 array_count | per array: u32 name_len | name | u32 rank
//   | u64 dims[rank] | f64 data[prod(dims)]
//
// The metadata holds the training config, vocabularies and counters. Arrays
// hold encoder and head parameters and the Adam moments ("adam.m.<name>",
// "adam.v.<name>"). Batch order is a pure function of (seed, epoch), so no
// generator state needs saving.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dalign/trainer.hpp"

namespace dalign {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(Model& model);
Model decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace dalign
