#pragma once

// Packed store of frozen visual features.
//
// Layout, little-endian:
//   "DVF1" | u32 version (=1) | u32 d_v | u64 record_count
//   per record: u32 id_len | id bytes (UTF-8) | u16 h_p | u16 w_p
//               | f32 cls[d_v] | f32 patches[h_p * w_p * d_v] (row-major)
//
// Values are f32 on disk and f64 in memory.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dalign/tensor.hpp"

namespace dalign {

struct FeatureRecord {
  std::string image_id;
  std::uint16_t grid_h = 0;
  std::uint16_t grid_w = 0;
  std::vector<double> cls;      // d_v
  std::vector<double> patches;  // grid_h * grid_w * d_v

  std::size_t patch_count() const { return std::size_t{grid_h} * grid_w; }
  // {n_v, d_v}, never requires grad.
  Tensor patch_tensor(std::size_t dim) const;
};

class FeatureStore {
 public:
  static constexpr std::uint32_t kVersion = 1;

  FeatureStore() = default;
  explicit FeatureStore(std::uint32_t dim) : dim_(dim) {}

  std::uint32_t dim() const { return dim_; }
  std::size_t size() const { return records_.size(); }
  const std::vector<FeatureRecord>& records() const { return records_; }
  const FeatureRecord& operator[](std::size_t i) const { return records_.at(i); }

  // Validates sizes and id uniqueness.
  void add(FeatureRecord record);
  // nullptr when absent.
  const FeatureRecord* find(const std::string& image_id) const;

 private:
  std::uint32_t dim_ = 0;
  std::vector<FeatureRecord> records_;
  std::map<std::string, std::size_t> index_;
};

std::vector<std::uint8_t> encode_feature_store(const FeatureStore& store);
FeatureStore decode_feature_store(const std::vector<std::uint8_t>& bytes);

void write_feature_store(const FeatureStore& store, const std::filesystem::path& path);
FeatureStore read_feature_store(const std::filesystem::path& path);

}  // namespace dalign
