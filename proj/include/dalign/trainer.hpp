#pragma once

// Optimization loop: caption/feature batches through the text encoder and
// the alignment objective, Adam updates, per-epoch checkpoints and metrics.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dalign/adam.hpp"
#include "dalign/alignment.hpp"
#include "dalign/captions.hpp"
#include "dalign/concepts.hpp"
#include "dalign/feature_store.hpp"
#include "dalign/text_encoder.hpp"
#include "dalign/vocab.hpp"

namespace dalign {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t epochs = 6;  // final epoch number, counted across resumes
  AlignmentOptions alignment;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;  // <= 0 disables clipping
  bool cosine_schedule = false;
  // Encoder shape; out_dim is taken from the feature store.
  std::size_t width = 128;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t max_len = 32;
  std::size_t vocab_min_freq = 1;
  std::size_t vocab_max_size = 20000;
  std::size_t concept_min_freq = 2;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Everything a checkpoint restores.
struct Model {
  TrainConfig config;
  Vocabulary vocab;
  ConceptVocabulary concepts;
  TextEncoder encoder;
  AlignmentHead head;
  Adam adam;
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;

  Model(TrainConfig config, Vocabulary vocab, ConceptVocabulary concepts, std::size_t out_dim);

  // Encoder parameters followed by head.classifier and head.log_scale.
  std::vector<NamedTensor> parameters();
};

// A caption prepared for training: tokens and its in-vocabulary concepts.
struct Example {
  std::size_t feature_index = 0;
  TokenizedCaption tokens;
  std::vector<ConceptInstance> concepts;  // example field is filled per batch
};

// Tokenizes every caption and keeps concepts whose label is in `concepts`
// and whose token set survived truncation. `store` may be null when only
// statistics are needed.
std::vector<Example> prepare_examples(std::span<const CaptionRecord> captions,
                                      const FeatureStore* store, const Vocabulary& vocab,
                                      const ConceptVocabulary& concepts, std::size_t max_len,
                                      const Lexicon& lexicon = Lexicon::builtin());

// Seeded batch order for one epoch; trailing batches smaller than 2 are
// dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

struct CaptionStats {
  double concepts_per_caption = 0.0;
  double unique_concepts_per_batch = 0.0;
  std::size_t captions = 0;
  std::size_t batches = 0;
};

// Counted exactly as the trainer counts them, over epoch 1's batching.
CaptionStats caption_statistics(std::span<const Example> examples, std::size_t batch_size,
                                std::uint64_t seed);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double global = 0.0;
  double concept_term = 0.0;
  double total = 0.0;
  double concepts_per_caption = 0.0;
  double unique_concepts_per_batch = 0.0;

  std::string to_json() const;
};

// Losses of every batch in `batches` without updating anything.
EpochMetrics evaluate_losses(Model& model, std::span<const Example> examples,
                             const FeatureStore& store,
                             const std::vector<std::vector<std::size_t>>& batches);

// One epoch of updates (model.epoch + 1).
EpochMetrics train_epoch(Model& model, std::span<const Example> examples,
                         const FeatureStore& store);

struct FitOptions {
  std::filesystem::path out_dir;  // checkpoints and metrics.jsonl
  std::optional<std::filesystem::path> resume;
  std::optional<std::filesystem::path> concept_vocab;  // instead of corpus-derived
  // Called after each epoch; for progress logging.
  std::function<void(const EpochMetrics&)> on_epoch;
};

struct FitResult {
  std::vector<EpochMetrics> metrics;
  std::filesystem::path checkpoint;
};

// Reads inputs (IoError / FormatError / InputError before any training),
// then trains to config.epochs. Epoch 0 in the log is the untrained model's
// loss over the first epoch's batches, recorded only for fresh runs.
FitResult fit(const TrainConfig& config, const std::filesystem::path& features,
              const std::filesystem::path& captions, const FitOptions& options);

}  // namespace dalign
