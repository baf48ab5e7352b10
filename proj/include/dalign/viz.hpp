#pragma once

// Qualitative views of patch features: similarity heatmaps against a text
// query and an RGB rendering of the top three principal components.

#include <cstddef>
#include <string>
#include <vector>

#include "dalign/feature_store.hpp"
#include "dalign/image_io.hpp"
#include "dalign/text_encoder.hpp"
#include "dalign/vocab.hpp"

namespace dalign {

struct Heatmap {
  std::vector<std::uint8_t> patch_levels;  // grid_h * grid_w, min-max scaled
  GrayImage image;                         // upsampled to the requested size
};

// Cosine of every patch with `query`, min-max scaled to [0, 255] on the
// patch grid, then bilinearly upsampled. A constant map scales to 0.
Heatmap heatmap(const FeatureRecord& record, std::size_t dim, const std::vector<double>& query,
                std::size_t out_w, std::size_t out_h);

// The query is the global text feature of `concept_text`.
Heatmap heatmap(const FeatureRecord& record, std::size_t dim, const std::string& concept_text,
                const TextEncoder& encoder, const Vocabulary& vocab, std::size_t out_w,
                std::size_t out_h);

struct PcaProjection {
  std::vector<double> components;  // 3 x dim, rows by decreasing variance
  std::vector<double> variances;   // 3 eigenvalues of the covariance
  std::vector<double> projected;   // n_v x 3 centered projections
};

// Throws InputError for fewer than 3 patches.
PcaProjection pca_project(const FeatureRecord& record, std::size_t dim);

// Per-channel min-max to [0, 255], upsampled.
RgbImage pca_rgb(const FeatureRecord& record, std::size_t dim, std::size_t out_w,
                 std::size_t out_h);

}  // namespace dalign
