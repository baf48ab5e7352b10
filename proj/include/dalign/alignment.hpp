#pragma once

// Concept pooling in both modalities and the two-term alignment objective:
//
//   c_t = mean of z_t over the concept's token positions
//   c_v = z_v^T softmax(z_v c_t / tau)
//   L_l = mean over concepts of CE(c_v h^T, label)
//   L_g = symmetric InfoNCE over L2-normalized global vectors, scaled by s
//   L_tot = L_g + lambda * L_l

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dalign/tensor.hpp"
#include "dalign/text_encoder.hpp"

namespace dalign {

inline constexpr double kInitialLogitScale = 1.0 / 0.07;
inline constexpr double kMaxLogitScale = 100.0;

struct AlignmentOptions {
  double lambda = 1.0;
  double tau = 0.1;
  // L2-normalize c_v and the rows of h before the concept logits.
  bool normalize_concepts = false;
  // L2-normalize patch features before the pooling inner product.
  bool normalize_patches = false;
  // Replace the row of h for every label present in the batch by the mean of
  // that label's text concepts.
  bool tie_head_to_prototypes = false;

  void validate() const;
  bool operator==(const AlignmentOptions&) const = default;
};

class AlignmentHead {
 public:
  AlignmentHead() = default;
  AlignmentHead(std::size_t concepts, std::size_t dim, std::uint64_t seed);

  // Concept classifier, {C, d}.
  Tensor& classifier() { return classifier_; }
  const Tensor& classifier() const { return classifier_; }
  // log of the global logit scale s.
  Tensor& log_scale() { return log_scale_; }
  const Tensor& log_scale() const { return log_scale_; }

  double logit_scale() const;
  // Enforces s <= 100.
  void clamp_scale();

  std::vector<NamedTensor> parameters();

 private:
  Tensor classifier_;
  Tensor log_scale_;
};

// Mean of the given rows of a {n, d} dense representation. Throws
// ContractError for an empty row set.
Tensor pool_text_concept(const Tensor& dense, std::span<const std::size_t> rows);

// Soft pooling of patches {n_v, d} by similarity with c_t {d}. When
// `weights` is given it receives the pooling distribution over patches.
Tensor pool_visual_concept(const Tensor& patches, const Tensor& text_concept, double tau,
                           std::vector<double>* weights = nullptr);

// Symmetric InfoNCE with logit scale s given as a scalar tensor. Needs a
// batch of at least 2.
Tensor global_contrastive_loss(const Tensor& visual_global, const Tensor& text_global,
                               const Tensor& logit_scale);

// Cross-entropy of c_v h^T against labels, averaged over concepts. An empty
// batch yields an exact zero without gradient.
Tensor concept_loss(const Tensor& visual_concepts, std::span<const std::size_t> labels,
                    const Tensor& classifier, bool normalize = false);

Tensor total_loss(const Tensor& global, const Tensor& concept_term, double lambda);

// One concept mention in a batch: example index, token positions S_l, label.
struct ConceptInstance {
  std::size_t example = 0;
  std::vector<std::size_t> positions;
  std::size_t label = 0;
};

struct BatchLosses {
  Tensor global;
  Tensor concept_term;
  Tensor total;
  std::size_t concepts = 0;
};

// Full objective for one batch. `patches[b]` is example b's {n_v, d} frozen
// patch matrix and `visual_global` stacks the frozen global vectors.
BatchLosses alignment_losses(const EncodeResult& text, std::span<const Tensor> patches,
                             const Tensor& visual_global,
                             std::span<const ConceptInstance> concepts, AlignmentHead& head,
                             const AlignmentOptions& options);

}  // namespace dalign
