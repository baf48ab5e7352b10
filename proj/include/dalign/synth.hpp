#pragma once

// Synthetic world: images are rectangle tilings of a patch grid, every
// rectangle owned by one concept. A patch's feature is its concept's unit
// mean plus Gaussian noise; the caption names exactly the concepts present.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dalign/captions.hpp"
#include "dalign/class_set.hpp"
#include "dalign/feature_store.hpp"
#include "dalign/image_io.hpp"

namespace dalign {

struct SyntheticWorldSpec {
  std::size_t concepts = 8;  // K, the first K names of concept_names()
  std::size_t dim = 16;      // d_v
  std::size_t grid_h = 16;
  std::size_t grid_w = 16;
  std::size_t patch_px = 4;  // mask pixels per patch side
  std::size_t min_regions = 1;
  std::size_t max_regions = 3;
  double noise = 0.05;
  std::vector<std::string> caption_templates{"a photo of {}."};
  std::size_t images = 32;
  // Image i of this call is global image first_image + i; splits drawn with
  // the same seed and disjoint ranges share concept means.
  std::size_t first_image = 0;
  std::uint64_t seed = 0;

  // Throws ConfigError (K > 26, K > d_v, regions exceeding the grid, ...).
  void validate() const;
};

// The 26 built-in concept names.
const std::vector<std::string>& concept_names();

struct Rect {
  std::size_t y0, x0, y1, x1;  // half-open patch ranges
  std::size_t concept_index;
};

struct SyntheticWorld {
  FeatureStore features;
  std::vector<CaptionRecord> captions;
  std::vector<Mask> masks;                 // one per image, labels = concept index
  std::vector<std::vector<Rect>> regions;  // one list per image
  std::vector<std::vector<double>> means;  // K orthonormal d_v vectors
  ClassSet classes;                        // names in concept-index order
};

SyntheticWorld generate_synthetic_world(const SyntheticWorldSpec& spec);

// Files: features.dvf, captions.jsonl, classes.json, means.json,
// masks/<image_id>.pgm.
void write_synthetic_world(const SyntheticWorld& world, const std::filesystem::path& dir);

// Masks for every record of `store`, read from <dir>/<image_id>.pgm.
std::vector<Mask> read_masks(const FeatureStore& store, const std::filesystem::path& dir);

}  // namespace dalign
