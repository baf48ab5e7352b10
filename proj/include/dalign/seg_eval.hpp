#pragma once

// Zero-shot segmentation from patch features and text class prototypes,
// scored by mIoU under the foreground and whole-image protocols.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dalign/class_set.hpp"
#include "dalign/feature_store.hpp"
#include "dalign/image_io.hpp"
#include "dalign/text_encoder.hpp"
#include "dalign/vocab.hpp"

namespace dalign {

struct ClassEmbedding {
  std::string name;
  std::vector<double> prototype;  // unit norm
};

// Mean of the global text features of every filled template, L2-normalized.
std::vector<ClassEmbedding> embed_classes(std::span<const std::string> names,
                                          std::span<const std::string> templates,
                                          const TextEncoder& encoder, const Vocabulary& vocab);

// Prototypes given directly as vectors (normalized here).
std::vector<ClassEmbedding> class_embeddings_from_vectors(
    std::span<const std::string> names, const std::vector<std::vector<double>>& vectors);

enum class Protocol { kForeground, kWholeImage };
std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& text);  // "fg" | "whole"

struct EvalConfig {
  std::size_t window = 32;  // in patches
  std::size_t stride = 16;
  Protocol protocol = Protocol::kForeground;
  std::optional<double> threshold;

  // stride in [1, window]. The threshold requirement is checked where the
  // whole-image protocol is applied.
  void validate() const;
};

// Start offsets along one axis; the last window is clamped to the edge.
std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, std::size_t stride);

// {n_v, C} cosine logits, averaged over the windows covering each patch.
std::vector<double> patch_logits(const FeatureRecord& record, std::size_t dim,
                                 std::span<const ClassEmbedding> classes,
                                 const EvalConfig& config);

// Bilinear resize of a row-major {h, w, channels} grid, pixel centers
// aligned (align_corners = false), edges clamped.
std::vector<double> upsample_bilinear(std::span<const double> grid, std::size_t h, std::size_t w,
                                      std::size_t channels, std::size_t out_h, std::size_t out_w);

struct SegPrediction {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint16_t> labels;  // row-major
  std::vector<double> scores;         // max logit per pixel
};

SegPrediction predict_image(const FeatureRecord& record, std::size_t dim,
                            std::span<const ClassEmbedding> classes, const EvalConfig& config,
                            std::size_t out_w, std::size_t out_h);

// Pixels scoring strictly below the threshold become `background`.
SegPrediction apply_background(SegPrediction pred, double threshold, std::uint16_t background);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : n_(classes), counts_(classes * classes, 0) {}
  std::size_t classes() const { return n_; }
  void add(std::size_t truth, std::size_t pred, std::uint64_t count = 1);
  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }
  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

// Foreground: sentinel pixels are skipped. Whole-image: sentinel pixels are
// truth class `classes` (background). Labels >= classes raise InputError.
void accumulate(ConfusionMatrix& cm, const SegPrediction& pred, const Mask& mask,
                Protocol protocol, std::size_t classes);

struct MIoUReport {
  std::vector<std::string> names;
  std::vector<std::optional<double>> iou;  // nullopt when absent from both sides
  double miou = 0.0;
  std::uint64_t pixels_scored = 0;
  Protocol protocol = Protocol::kForeground;
  std::optional<double> threshold;

  std::string to_json() const;
};

// IoU = TP / (TP + FP + FN) per class; classes absent from prediction and
// truth, and classes in `ignore`, are left out of the mean. Throws
// ContractError when no pixel was scored.
MIoUReport miou(const ConfusionMatrix& cm, std::span<const std::string> names,
                std::span<const std::size_t> ignore = {},
                Protocol protocol = Protocol::kForeground,
                std::optional<double> threshold = std::nullopt);

// Grid value maximizing whole-image mIoU; ties go to the lowest value.
double calibrate_threshold(std::span<const SegPrediction> predictions,
                           std::span<const Mask> masks, std::size_t classes,
                           std::span<const double> grid);

// Evenly spaced grid over [lo, hi].
std::vector<double> linear_grid(double lo, double hi, std::size_t count);

struct EvalResult {
  MIoUReport report;
  std::vector<SegPrediction> predictions;  // before background assignment
};

// Predicts every record (in parallel) and scores it against masks[i]. For
// the whole-image protocol config.threshold must be set.
EvalResult evaluate(const FeatureStore& store, std::span<const Mask> masks,
                    std::span<const ClassEmbedding> classes, const EvalConfig& config);

}  // namespace dalign
