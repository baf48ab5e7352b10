#include "dalign/feature_store.hpp"

#include <bit>
#include <cstring>

#include "dalign/binary_io.hpp"
#include "dalign/error.hpp"

namespace dalign {

namespace {

constexpr char kMagic[4] = {'D', 'V', 'F', '1'};

}  // namespace

Tensor FeatureRecord::patch_tensor(std::size_t dim) const {
  return Tensor::from({patch_count(), dim}, patches, false);
}

void FeatureStore::add(FeatureRecord record) {
  if (record.cls.size() != dim_) {
    throw FormatError("feature record '" + record.image_id + "': cls has " +
                      std::to_string(record.cls.size()) + " values, store d_v is " +
                      std::to_string(dim_));
  }
  if (record.patches.size() != record.patch_count() * dim_) {
    throw FormatError("feature record '" + record.image_id + "': expected " +
                      std::to_string(record.patch_count() * dim_) + " patch values, got " +
                      std::to_string(record.patches.size()));
  }
  if (!index_.emplace(record.image_id, records_.size()).second) {
    throw FormatError("feature store: duplicate image_id '" + record.image_id + "'");
  }
  records_.push_back(std::move(record));
}

const FeatureRecord* FeatureStore::find(const std::string& image_id) const {
  auto it = index_.find(image_id);
  return it == index_.end() ? nullptr : &records_[it->second];
}

std::vector<std::uint8_t> encode_feature_store(const FeatureStore& store) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(FeatureStore::kVersion);
  w.u32(store.dim());
  w.u64(store.size());
  for (const auto& r : store.records()) {
    w.u32(static_cast<std::uint32_t>(r.image_id.size()));
    w.raw(r.image_id.data(), r.image_id.size());
    w.u16(r.grid_h);
    w.u16(r.grid_w);
    for (double v : r.cls) w.f32(static_cast<float>(v));
    for (double v : r.patches) w.f32(static_cast<float>(v));
  }
  return w.take();
}

FeatureStore decode_feature_store(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "feature store");
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("feature store: bad magic at byte offset 0");
  }
  const auto version_at = r.offset();
  const auto version = r.u32();
  if (version != FeatureStore::kVersion) {
    throw FormatError("feature store: unsupported version " + std::to_string(version) +
                      " at byte offset " + std::to_string(version_at));
  }
  FeatureStore store(r.u32());
  const auto count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto record_at = r.offset();
    FeatureRecord rec;
    const auto id_len = r.u32();
    rec.image_id = r.string(id_len);
    rec.grid_h = r.u16();
    rec.grid_w = r.u16();
    rec.cls.resize(store.dim());
    for (auto& v : rec.cls) v = r.f32();
    rec.patches.resize(rec.patch_count() * store.dim());
    for (auto& v : rec.patches) v = r.f32();
    try {
      store.add(std::move(rec));
    } catch (const FormatError& e) {
      throw FormatError(std::string(e.what()) + " (record at byte offset " +
                        std::to_string(record_at) + ")");
    }
  }
  if (!r.at_end()) {
    throw FormatError("feature store: trailing bytes at offset " + std::to_string(r.offset()));
  }
  return store;
}

void write_feature_store(const FeatureStore& store, const std::filesystem::path& path) {
  write_file(path, encode_feature_store(store));
}

FeatureStore read_feature_store(const std::filesystem::path& path) {
  return decode_feature_store(read_file(path));
}

}  // namespace dalign
