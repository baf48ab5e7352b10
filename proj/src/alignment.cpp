#include "dalign/alignment.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "dalign/error.hpp"
#include "dalign/rng.hpp"

namespace dalign {

void AlignmentOptions::validate() const {
  if (!(tau > 0.0)) throw ParameterError("tau must be positive");
  if (!(lambda >= 0.0)) throw ParameterError("lambda must be non-negative");
}

AlignmentHead::AlignmentHead(std::size_t concepts, std::size_t dim, std::uint64_t seed) {
  if (concepts == 0 || dim == 0) throw ConfigError("alignment head needs concepts and a width");
  Rng rng(seed);
  std::vector<double> w(concepts * dim);
  for (auto& v : w) v = 0.02 * rng.normal();
  classifier_ = Tensor::from({concepts, dim}, std::move(w), true);
  log_scale_ = Tensor::scalar(std::log(kInitialLogitScale), true);
}

double AlignmentHead::logit_scale() const { return std::exp(log_scale_.item()); }

void AlignmentHead::clamp_scale() {
  auto v = log_scale_.mutable_data();
  v[0] = std::min(v[0], std::log(kMaxLogitScale));
}

std::vector<NamedTensor> AlignmentHead::parameters() {
  return {{"head.classifier", classifier_}, {"head.log_scale", log_scale_}};
}

Tensor pool_text_concept(const Tensor& dense, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ContractError("pool_text_concept: empty index set");
  return mean_rows(dense, rows);
}

Tensor pool_visual_concept(const Tensor& patches, const Tensor& text_concept, double tau,
                           std::vector<double>* weights) {
  if (!(tau > 0.0)) throw ParameterError("pool_visual_concept: tau must be positive");
  if (patches.rank() != 2) throw ShapeError("pool_visual_concept: patches must be {n_v, d}");
  const auto d = patches.dim(1);
  if (text_concept.numel() != d) {
    throw ShapeError("pool_visual_concept: concept width " + std::to_string(text_concept.numel()) +
                     " differs from patch width " + std::to_string(d));
  }
  Tensor scores = matmul(patches, reshape(text_concept, {d, 1}));
  Tensor w = softmax(scores, 0, tau);
  if (weights) weights->assign(w.data().begin(), w.data().end());
  return reshape(matmul(transpose(patches), w), {d});
}

Tensor global_contrastive_loss(const Tensor& visual_global, const Tensor& text_global,
                               const Tensor& logit_scale) {
  if (visual_global.rank() != 2 || visual_global.shape() != text_global.shape()) {
    throw ShapeError("global_contrastive_loss: shapes " + shape_str(visual_global.shape()) +
                     " and " + shape_str(text_global.shape()) + " must be equal {b, d}");
  }
  const auto b = visual_global.dim(0);
  if (b < 2) throw ContractError("global_contrastive_loss: needs a batch of at least 2");
  Tensor v = l2_normalize(visual_global, 1);
  Tensor t = l2_normalize(text_global, 1);
  Tensor logits = mul_scalar(matmul(v, transpose(t)), logit_scale);
  std::vector<std::size_t> diag(b);
  std::iota(diag.begin(), diag.end(), std::size_t{0});
  return scale(add(cross_entropy(logits, diag), cross_entropy(transpose(logits), diag)), 0.5);
}

Tensor concept_loss(const Tensor& visual_concepts, std::span<const std::size_t> labels,
                    const Tensor& classifier, bool normalize) {
  if (labels.empty()) return Tensor::scalar(0.0);
  if (visual_concepts.rank() != 2 || visual_concepts.dim(0) != labels.size()) {
    throw ShapeError("concept_loss: expected {" + std::to_string(labels.size()) +
                     ", d} concepts, got " + shape_str(visual_concepts.shape()));
  }
  Tensor c = normalize ? l2_normalize(visual_concepts, 1) : visual_concepts;
  Tensor h = normalize ? l2_normalize(classifier, 1) : classifier;
  return cross_entropy(matmul(c, transpose(h)), labels);
}

Tensor total_loss(const Tensor& global, const Tensor& concept_term, double lambda) {
  if (!(lambda >= 0.0)) throw ParameterError("total_loss: lambda must be non-negative");
  return add(global, scale(concept_term, lambda));
}

BatchLosses alignment_losses(const EncodeResult& text, std::span<const Tensor> patches,
                             const Tensor& visual_global,
                             std::span<const ConceptInstance> concepts, AlignmentHead& head,
                             const AlignmentOptions& options) {
  options.validate();
  if (patches.size() != text.batch) {
    throw ShapeError("alignment_losses: " + std::to_string(patches.size()) +
                     " patch sets for a batch of " + std::to_string(text.batch));
  }
  BatchLosses out;
  out.global = global_contrastive_loss(visual_global, text.global, exp(head.log_scale()));

  std::vector<Tensor> normalized;
  if (options.normalize_patches) {
    normalized.reserve(patches.size());
    for (const auto& p : patches) normalized.push_back(l2_normalize(p, 1));
    patches = normalized;
  }

  std::vector<Tensor> text_concepts, visual_concepts;
  std::vector<std::size_t> labels;
  for (const auto& c : concepts) {
    if (c.positions.empty()) continue;
    if (c.example >= text.batch) throw IndexError("alignment_losses: concept example out of range");
    std::vector<std::size_t> rows;
    rows.reserve(c.positions.size());
    for (auto p : c.positions) {
      if (p >= text.seq) throw IndexError("alignment_losses: concept position out of range");
      rows.push_back(text.row(c.example, p));
    }
    Tensor ct = pool_text_concept(text.dense, rows);
    visual_concepts.push_back(pool_visual_concept(patches[c.example], ct, options.tau));
    text_concepts.push_back(std::move(ct));
    labels.push_back(c.label);
  }
  out.concepts = labels.size();

  if (labels.empty()) {
    out.concept_term = Tensor::scalar(0.0);
  } else {
    Tensor classifier = head.classifier();
    if (options.tie_head_to_prototypes) {
      std::map<std::size_t, std::vector<std::size_t>> by_label;
      for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
      Tensor stacked = stack_rows(text_concepts);
      const auto rows = classifier.dim(0);
      std::vector<Tensor> tied;
      tied.reserve(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        auto it = by_label.find(r);
        if (it != by_label.end()) {
          tied.push_back(mean_rows(stacked, it->second));
        } else {
          std::vector<std::size_t> one{r};
          tied.push_back(mean_rows(classifier, one));
        }
      }
      classifier = stack_rows(tied);
    }
    out.concept_term =
        concept_loss(stack_rows(visual_concepts), labels, classifier, options.normalize_concepts);
  }
  out.total = total_loss(out.global, out.concept_term, options.lambda);
  return out;
}

}  // namespace dalign
