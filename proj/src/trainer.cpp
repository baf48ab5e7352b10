#include "dalign/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "dalign/binary_io.hpp"
#include "dalign/checkpoint.hpp"
#include "dalign/error.hpp"
#include "dalign/rng.hpp"

namespace dalign {

namespace {

constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kEncoderStream = 2;
constexpr std::uint64_t kHeadStream = 3;

EncoderConfig encoder_config(const TrainConfig& c, std::size_t vocab_size, std::size_t out_dim) {
  EncoderConfig e;
  e.width = c.width;
  e.layers = c.layers;
  e.heads = c.heads;
  e.max_len = c.max_len;
  e.vocab_size = vocab_size;
  e.out_dim = out_dim;
  return e;
}

struct BatchResult {
  BatchLosses losses;
  std::size_t captions = 0;
  std::size_t concepts = 0;
  std::size_t unique_concepts = 0;
};

BatchResult run_batch(Model& model, std::span<const Example> examples, const FeatureStore& store,
                      std::span<const std::size_t> batch) {
  const std::size_t d = store.dim();
  std::vector<TokenizedCaption> tokens;
  std::vector<Tensor> patches;
  std::vector<double> cls;
  std::vector<ConceptInstance> concepts;
  std::set<std::size_t> labels;
  tokens.reserve(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Example& ex = examples[batch[b]];
    const FeatureRecord& rec = store[ex.feature_index];
    tokens.push_back(ex.tokens);
    patches.push_back(rec.patch_tensor(d));
    cls.insert(cls.end(), rec.cls.begin(), rec.cls.end());
    for (auto c : ex.concepts) {
      c.example = b;
      labels.insert(c.label);
      concepts.push_back(std::move(c));
    }
  }
  const EncodeResult text = model.encoder.encode(tokens);
  const Tensor visual_global = Tensor::from({batch.size(), d}, std::move(cls));
  BatchResult r;
  r.losses = alignment_losses(text, patches, visual_global, concepts, model.head,
                              model.config.alignment);
  r.captions = batch.size();
  r.concepts = concepts.size();
  r.unique_concepts = labels.size();
  return r;
}

struct MetricSums {
  double global = 0.0, concept_term = 0.0, total = 0.0, unique = 0.0;
  std::size_t batches = 0, captions = 0, concepts = 0;

  void add(const BatchResult& r) {
    global += r.losses.global.item();
    concept_term += r.losses.concept_term.item();
    total += r.losses.total.item();
    unique += static_cast<double>(r.unique_concepts);
    captions += r.captions;
    concepts += r.concepts;
    ++batches;
  }

  EpochMetrics finish(std::size_t epoch, std::uint64_t step) const {
    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    const double nb = static_cast<double>(batches);
    m.global = global / nb;
    m.concept_term = concept_term / nb;
    m.total = total / nb;
    m.concepts_per_caption = static_cast<double>(concepts) / static_cast<double>(captions);
    m.unique_concepts_per_batch = unique / nb;
    return m;
  }
};

void require_batches(const std::vector<std::vector<std::size_t>>& batches) {
  if (batches.empty()) throw InputError("training data yields no batch of at least 2 examples");
}

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  out << line << '\n';
}

}  // namespace

void TrainConfig::validate() const {
  adam.validate();
  alignment.validate();
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (!std::isfinite(clip_norm)) throw ConfigError("clip norm must be finite");
  if (concept_min_freq < 1 || vocab_min_freq < 1) throw ConfigError("min_freq must be at least 1");
  if (vocab_max_size <= Vocabulary::kSpecialCount) {
    throw ConfigError("vocab max size must exceed the special token count");
  }
}

Model::Model(TrainConfig cfg, Vocabulary v, ConceptVocabulary c, std::size_t out_dim)
    : config(std::move(cfg)),
      vocab(std::move(v)),
      concepts(std::move(c)),
      encoder(encoder_config(config, vocab.size(), out_dim), derive_seed(config.seed, kEncoderStream)),
      head(concepts.size(), out_dim, derive_seed(config.seed, kHeadStream)),
      adam() {
  adam = Adam(parameters());
}

std::vector<NamedTensor> Model::parameters() {
  std::vector<NamedTensor> out = encoder.parameters();
  for (auto& p : head.parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<Example> prepare_examples(std::span<const CaptionRecord> captions,
                                      const FeatureStore* store, const Vocabulary& vocab,
                                      const ConceptVocabulary& concepts, std::size_t max_len,
                                      const Lexicon& lexicon) {
  std::vector<std::string> texts;
  texts.reserve(captions.size());
  for (const auto& c : captions) texts.push_back(c.caption);
  const CorpusWords corpus = corpus_words(texts);

  std::vector<Example> out;
  out.reserve(captions.size());
  for (const auto& c : captions) {
    Example ex;
    if (store) {
      const FeatureRecord* rec = store->find(c.image_id);
      if (!rec) throw InputError("caption image_id not in feature store: " + c.image_id);
      ex.feature_index = static_cast<std::size_t>(rec - store->records().data());
    }
    ex.tokens = tokenize(c.caption, vocab, max_len);
    for (const auto& np : extract_noun_phrases(c.caption, lexicon, &corpus)) {
      const auto label = concepts.label(np.head);
      if (label == ConceptVocabulary::kNone) continue;
      auto positions = span_to_token_indices(np, ex.tokens);
      if (positions.empty()) continue;
      ex.concepts.push_back({0, std::move(positions), label});
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 2) throw ConfigError("batch size must be at least 2");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(derive_seed(derive_seed(seed, kShuffleStream), epoch));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < count; i += batch_size) {
    const auto end = std::min(count, i + batch_size);
    if (end - i < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

CaptionStats caption_statistics(std::span<const Example> examples, std::size_t batch_size,
                                std::uint64_t seed) {
  if (examples.empty()) throw InputError("caption statistics: empty caption store");
  CaptionStats s;
  s.captions = examples.size();
  std::size_t concepts = 0;
  for (const auto& ex : examples) concepts += ex.concepts.size();
  s.concepts_per_caption = static_cast<double>(concepts) / static_cast<double>(examples.size());
  const auto batches = epoch_batches(examples.size(), batch_size, seed, 1);
  double unique = 0.0;
  for (const auto& batch : batches) {
    std::set<std::size_t> labels;
    for (auto i : batch)
      for (const auto& c : examples[i].concepts) labels.insert(c.label);
    unique += static_cast<double>(labels.size());
  }
  s.batches = batches.size();
  if (!batches.empty()) s.unique_concepts_per_batch = unique / static_cast<double>(batches.size());
  return s;
}

std::string EpochMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["step"] = step;
  j["L_g"] = global;
  j["L_l"] = concept_term;
  j["L_tot"] = total;
  j["concepts_per_caption"] = concepts_per_caption;
  j["unique_concepts_per_batch"] = unique_concepts_per_batch;
  return j.dump();
}

EpochMetrics evaluate_losses(Model& model, std::span<const Example> examples,
                             const FeatureStore& store,
                             const std::vector<std::vector<std::size_t>>& batches) {
  require_batches(batches);
  NoGradGuard no_grad;
  MetricSums sums;
  for (const auto& batch : batches) sums.add(run_batch(model, examples, store, batch));
  return sums.finish(model.epoch, model.step);
}

EpochMetrics train_epoch(Model& model, std::span<const Example> examples,
                         const FeatureStore& store) {
  const TrainConfig& cfg = model.config;
  const std::size_t epoch = model.epoch + 1;
  const auto batches = epoch_batches(examples.size(), cfg.batch_size, cfg.seed, epoch);
  require_batches(batches);
  const double total_steps = static_cast<double>(cfg.epochs * batches.size());

  auto params = model.parameters();
  MetricSums sums;
  for (const auto& batch : batches) {
    for (auto& p : params) p.tensor.zero_grad();
    BatchResult r = run_batch(model, examples, store, batch);
    if (!std::isfinite(r.losses.total.item())) {
      throw NumericError("non-finite loss at step " + std::to_string(model.step + 1));
    }
    r.losses.total.backward();
    sums.add(r);
    r = BatchResult{};  // release the graph before updating parameters
    clip_grad_norm(params, cfg.clip_norm);
    double lr = cfg.adam.lr;
    if (cfg.cosine_schedule) {
      const double t = std::min(1.0, static_cast<double>(model.step) / total_steps);
      lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
    model.adam.step(params, cfg.adam, lr);
    model.head.clamp_scale();
    ++model.step;
    for (const auto& p : params) {
      if (!p.tensor.all_finite()) throw NumericError("non-finite value in parameter " + p.name);
    }
  }
  for (auto& p : params) p.tensor.zero_grad();
  model.epoch = epoch;
  return sums.finish(epoch, model.step);
}

FitResult fit(const TrainConfig& config, const std::filesystem::path& features,
              const std::filesystem::path& captions, const FitOptions& options) {
  config.validate();
  const FeatureStore store = read_feature_store(features);
  const auto records = read_captions(captions);
  if (records.empty()) throw InputError("caption store is empty: " + captions.string());
  check_captions_resolve(records, store);

  std::optional<Model> model;
  if (options.resume) {
    model.emplace(load_checkpoint(*options.resume));
    // Architecture and vocabularies come from the checkpoint.
    TrainConfig merged = config;
    merged.width = model->config.width;
    merged.layers = model->config.layers;
    merged.heads = model->config.heads;
    merged.max_len = model->config.max_len;
    merged.vocab_min_freq = model->config.vocab_min_freq;
    merged.vocab_max_size = model->config.vocab_max_size;
    merged.concept_min_freq = model->config.concept_min_freq;
    model->config = merged;
  } else {
    std::vector<std::string> texts;
    texts.reserve(records.size());
    for (const auto& r : records) texts.push_back(r.caption);
    Vocabulary vocab = build_vocab(texts, config.vocab_min_freq, config.vocab_max_size);
    ConceptVocabulary concepts = options.concept_vocab
                                     ? ConceptVocabulary::load(*options.concept_vocab)
                                     : build_concept_vocab(texts, config.concept_min_freq);
    if (concepts.empty()) throw ConfigError("concept vocabulary is empty");
    model.emplace(config, std::move(vocab), std::move(concepts), store.dim());
  }
  if (model->encoder.config().out_dim != store.dim()) {
    throw ConfigError("feature width " + std::to_string(store.dim()) +
                      " differs from encoder output width " +
                      std::to_string(model->encoder.config().out_dim));
  }

  const auto examples =
      prepare_examples(records, &store, model->vocab, model->concepts, model->config.max_len);
  std::filesystem::create_directories(options.out_dir);
  const auto log_path = options.out_dir / "metrics.jsonl";
  FitResult result;
  if (!options.resume) {
    std::filesystem::remove(log_path);
    const auto batches =
        epoch_batches(examples.size(), model->config.batch_size, model->config.seed, 1);
    EpochMetrics initial = evaluate_losses(*model, examples, store, batches);
    append_line(log_path, initial.to_json());
    if (options.on_epoch) options.on_epoch(initial);
    result.metrics.push_back(initial);
  }
  result.checkpoint = options.out_dir / "checkpoint.dack";
  while (model->epoch < model->config.epochs) {
    EpochMetrics m = train_epoch(*model, examples, store);
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%04zu.dack", m.epoch);
    const auto bytes = encode_checkpoint(*model);
    write_file(options.out_dir / name, bytes);
    write_file(result.checkpoint, bytes);
    append_line(log_path, m.to_json());
    if (options.on_epoch) options.on_epoch(m);
    result.metrics.push_back(m);
  }
  return result;
}

}  // namespace dalign
