#include "dalign/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dalign/binary_io.hpp"
#include "dalign/captions.hpp"
#include "dalign/checkpoint.hpp"
#include "dalign/class_set.hpp"
#include "dalign/concepts.hpp"
#include "dalign/error.hpp"
#include "dalign/feature_store.hpp"
#include "dalign/seg_eval.hpp"
#include "dalign/synth.hpp"
#include "dalign/trainer.hpp"
#include "dalign/viz.hpp"

#ifndef DALIGN_VERSION
#define DALIGN_VERSION "0.0.0"
#endif

namespace dalign::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string version() { return DALIGN_VERSION; }

namespace {

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// Tracks which flags name input and output paths, for the manifest.
struct PathRoles {
  std::set<std::string> inputs;
  std::set<std::string> outputs;
};

std::string flag_name(const CLI::Option* opt) {
  const auto& l = opt->get_lnames();
  return l.empty() ? opt->get_name() : l.front();
}

json option_values(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub.get_options()) {
    const auto name = flag_name(opt);
    if (name == "help") continue;
    if (opt->get_expected_min() == 0) {
      j[name] = opt->count() > 0;
    } else if (opt->count() > 0) {
      const auto& r = opt->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else if (!opt->get_default_str().empty()) {
      j[name] = opt->get_default_str();
    } else {
      j[name] = nullptr;
    }
  }
  return j;
}

json build_manifest(const CLI::App& sub, const PathRoles& roles,
                    const std::vector<std::string>& args) {
  json config = option_values(sub);
  json m;
  m["tool"] = "dalign";
  m["version"] = version();
  m["subcommand"] = sub.get_name();
  m["argv"] = args;
  json inputs = json::object(), outputs = json::object();
  for (auto& [k, v] : config.items()) {
    if (roles.inputs.contains(k)) inputs[k] = v;
    if (roles.outputs.contains(k)) outputs[k] = v;
  }
  m["config"] = config;
  m["seed"] = nullptr;
  if (config.contains("seed")) m["seed"] = std::stoull(config["seed"].get<std::string>());
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  return m;
}

// CLI11 prints [default] only for options taking a value.
void show_flag_defaults(CLI::App& app) {
  for (auto* sub : app.get_subcommands({})) {
    for (auto* opt : sub->get_options()) {
      if (opt == sub->get_help_ptr()) continue;
      if (opt->get_expected_max() == 0) {
        opt->description(opt->get_description() + " [off]");
      } else if (!opt->get_required() && opt->get_default_str().empty() && !opt->get_positional()) {
        opt->description(opt->get_description() + " [unset]");
      }
    }
  }
}

// Written before any work; without a file destination it goes to stderr.
void write_manifest(const json& manifest, const std::optional<fs::path>& path, Streams& s) {
  if (path) {
    write_text_file(*path, manifest.dump(2) + "\n");
    s.err << "manifest: " << path->string() << "\n";
  } else {
    s.err << "manifest: " << manifest.dump() << "\n";
  }
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return fs::path(p.string() + suffix);
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw IoError(what + " not found: " + p.string());
}

void require_dir(const fs::path& p, const std::string& what) {
  if (!fs::is_directory(p)) throw IoError(what + " not found: " + p.string());
}

std::vector<std::vector<double>> read_vectors(const fs::path& path) {
  require_file(path, "prototype file");
  try {
    return json::parse(read_text_file(path)).get<std::vector<std::vector<double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("prototype file " + path.string() + ": " + e.what());
  }
}

const FeatureRecord& find_record(const FeatureStore& store, const std::string& id) {
  if (id.empty()) {
    if (store.size() == 0) throw InputError("feature store is empty");
    return store[0];
  }
  const FeatureRecord* rec = store.find(id);
  if (!rec) throw InputError("image id not in feature store: " + id);
  return *rec;
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  TrainConfig config;
  fs::path features, captions, out;
  std::string resume, concept_vocab;
};

void add_train(CLI::App& app, TrainArgs& a, PathRoles& roles) {
  auto* sub = app.add_subcommand("train", "Train the text encoder and alignment head");
  auto& c = a.config;
  sub->add_option("--features", a.features, "Feature store (DVF1)")->required();
  sub->add_option("--captions", a.captions, "Caption store (JSONL)")->required();
  sub->add_option("--out", a.out, "Output directory for checkpoints and metrics.jsonl")->required();
  sub->add_option("--epochs", c.epochs, "Final epoch number (counted across resumes)");
  sub->add_option("--batch-size", c.batch_size, "Captions per batch (>= 2)");
  sub->add_option("--lr", c.adam.lr, "Adam learning rate");
  sub->add_option("--beta1", c.adam.beta1, "Adam beta1");
  sub->add_option("--beta2", c.adam.beta2, "Adam beta2");
  sub->add_option("--adam-eps", c.adam.eps, "Adam epsilon");
  sub->add_option("--clip", c.clip_norm, "Global gradient-norm clip (<= 0 disables)");
  sub->add_flag("--cosine", c.cosine_schedule, "Cosine learning-rate decay");
  sub->add_option("--lambda", c.alignment.lambda, "Weight of the concept loss");
  sub->add_option("--tau", c.alignment.tau, "Visual pooling temperature");
  sub->add_flag("--normalize-concepts", c.alignment.normalize_concepts,
                "L2-normalize visual concepts and classifier rows");
  sub->add_flag("--normalize-patches", c.alignment.normalize_patches,
                "L2-normalize patch features before pooling");
  sub->add_flag("--tie-head", c.alignment.tie_head_to_prototypes,
                "Tie classifier rows to text-concept prototypes");
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--width", c.width, "Encoder width");
  sub->add_option("--layers", c.layers, "Encoder layers");
  sub->add_option("--heads", c.heads, "Attention heads");
  sub->add_option("--max-len", c.max_len, "Maximum token length");
  sub->add_option("--vocab-min-freq", c.vocab_min_freq, "Minimum word frequency");
  sub->add_option("--vocab-max-size", c.vocab_max_size, "Vocabulary cap including specials");
  sub->add_option("--concept-min-freq", c.concept_min_freq, "Minimum concept frequency");
  sub->add_option("--concept-vocab", a.concept_vocab,
                  "Concept vocabulary file (one per line) instead of corpus-derived");
  sub->add_option("--resume", a.resume, "Checkpoint to continue from");
  roles.inputs.insert({"features", "captions", "resume", "concept-vocab"});
  roles.outputs.insert("out");
}

int cmd_train(const TrainArgs& a, Streams& s) {
  require_file(a.features, "feature store");
  require_file(a.captions, "caption store");
  FitOptions opts;
  opts.out_dir = a.out;
  if (!a.resume.empty()) {
    require_file(a.resume, "checkpoint");
    opts.resume = a.resume;
  }
  if (!a.concept_vocab.empty()) {
    require_file(a.concept_vocab, "concept vocabulary");
    opts.concept_vocab = a.concept_vocab;
  }
  opts.on_epoch = [&s](const EpochMetrics& m) {
    s.err << "epoch " << m.epoch << " step " << m.step << std::setprecision(6)
          << " L_g=" << m.global << " L_l=" << m.concept_term << " L_tot=" << m.total << "\n";
  };
  const FitResult r = fit(a.config, a.features, a.captions, opts);
  json j;
  j["checkpoint"] = r.checkpoint.string();
  j["metrics"] = (a.out / "metrics.jsonl").string();
  j["epochs_run"] = r.metrics.size();
  if (!r.metrics.empty()) j["final"] = json::parse(r.metrics.back().to_json());
  s.out << j.dump(2) << "\n";
  return kExitOk;
}

// --- eval ------------------------------------------------------------------

struct EvalArgs {
  fs::path features, masks, classes, out;
  std::string checkpoint, prototypes;
  std::string protocol = "fg";
  std::optional<double> threshold;
  bool calibrate = false;
  std::string val_features, val_masks;
  double grid_lo = -1.0, grid_hi = 1.0;
  std::size_t grid_steps = 81;
  EvalConfig config;
};

void add_eval(CLI::App& app, EvalArgs& a, PathRoles& roles) {
  auto* sub = app.add_subcommand("eval", "Zero-shot segmentation mIoU");
  sub->add_option("--checkpoint", a.checkpoint, "Trained checkpoint (DACK)");
  sub->add_option("--prototypes", a.prototypes,
                  "JSON list of class vectors replacing text prototypes");
  sub->add_option("--features", a.features, "Feature store to segment")->required();
  sub->add_option("--masks", a.masks, "Directory of <image_id>.pgm masks")->required();
  sub->add_option("--classes", a.classes, "Class-set JSON")->required();
  sub->add_option("--out", a.out, "Report JSON path")->required();
  sub->add_option("--protocol", a.protocol, "fg | whole")
      ->check(CLI::IsMember({"fg", "whole"}));
  sub->add_option("--threshold", a.threshold, "Background threshold (whole protocol)");
  sub->add_flag("--calibrate", a.calibrate, "Pick the threshold on a validation split");
  sub->add_option("--val-features", a.val_features, "Validation feature store for --calibrate");
  sub->add_option("--val-masks", a.val_masks, "Validation mask directory for --calibrate");
  sub->add_option("--grid-lo", a.grid_lo, "Calibration grid lower end");
  sub->add_option("--grid-hi", a.grid_hi, "Calibration grid upper end");
  sub->add_option("--grid-steps", a.grid_steps, "Calibration grid size");
  sub->add_option("--window", a.config.window, "Sliding window in patches");
  sub->add_option("--stride", a.config.stride, "Window stride in patches");
  roles.inputs.insert({"checkpoint", "prototypes", "features", "masks", "classes",
                       "val-features", "val-masks"});
  roles.outputs.insert("out");
}

std::vector<ClassEmbedding> load_class_embeddings(const EvalArgs& a, const ClassSet& set) {
  if (!a.prototypes.empty()) {
    return class_embeddings_from_vectors(set.classes, read_vectors(a.prototypes));
  }
  if (a.checkpoint.empty()) throw ConfigError("eval needs --checkpoint or --prototypes");
  require_file(a.checkpoint, "checkpoint");
  Model model = load_checkpoint(a.checkpoint);
  return embed_classes(set.classes, set.templates, model.encoder, model.vocab);
}

int cmd_eval(EvalArgs a, Streams& s) {
  require_file(a.features, "feature store");
  require_dir(a.masks, "mask directory");
  require_file(a.classes, "class set");
  const ClassSet set = read_class_set(a.classes);
  a.config.protocol = parse_protocol(a.protocol);
  a.config.threshold = a.threshold;
  if (a.config.protocol == Protocol::kWholeImage && !a.threshold && !a.calibrate) {
    if (!set.background_threshold) {
      throw ConfigError("whole protocol needs --threshold, --calibrate or a class-set threshold");
    }
    a.config.threshold = set.background_threshold;
  }
  a.config.validate();
  const auto classes = load_class_embeddings(a, set);

  if (a.calibrate) {
    if (a.config.protocol != Protocol::kWholeImage) {
      throw ConfigError("--calibrate applies to the whole protocol");
    }
    if (a.val_features.empty() || a.val_masks.empty()) {
      throw ConfigError("--calibrate needs --val-features and --val-masks");
    }
    require_file(a.val_features, "validation feature store");
    require_dir(a.val_masks, "validation mask directory");
    const FeatureStore val = read_feature_store(a.val_features);
    const auto val_masks = read_masks(val, a.val_masks);
    EvalConfig fg = a.config;
    fg.protocol = Protocol::kForeground;
    const auto preds = evaluate(val, val_masks, classes, fg).predictions;
    const auto grid = linear_grid(a.grid_lo, a.grid_hi, a.grid_steps);
    a.config.threshold = calibrate_threshold(preds, val_masks, classes.size(), grid);
    s.err << "calibrated threshold " << *a.config.threshold << "\n";
  }

  const FeatureStore store = read_feature_store(a.features);
  const auto masks = read_masks(store, a.masks);
  const EvalResult r = evaluate(store, masks, classes, a.config);
  const auto text = r.report.to_json();
  write_text_file(a.out, text + "\n");
  s.out << text << "\n";
  return kExitOk;
}

// --- stats -----------------------------------------------------------------

struct StatsArgs {
  fs::path captions;
  std::string classes, concept_vocab, out;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::size_t max_len = 32;
  std::size_t concept_min_freq = 2;
};

void add_stats(CLI::App& app, StatsArgs& a, PathRoles& roles) {
  auto* sub = app.add_subcommand("stats", "Concepts per caption and unique concepts per batch");
  sub->add_option("--captions", a.captions, "Caption store (JSONL)")->required();
  sub->add_option("--classes", a.classes, "Class-set JSON whose classes form the vocabulary");
  sub->add_option("--concept-vocab", a.concept_vocab, "Concept vocabulary file");
  sub->add_option("--batch-size", a.batch_size, "Batch size for the per-batch statistic");
  sub->add_option("--seed", a.seed, "Batching seed");
  sub->add_option("--max-len", a.max_len, "Maximum token length");
  sub->add_option("--concept-min-freq", a.concept_min_freq,
                  "Minimum frequency when the vocabulary is corpus-derived");
  sub->add_option("--out", a.out, "Also write the JSON here");
  roles.inputs.insert({"captions", "classes", "concept-vocab"});
  roles.outputs.insert("out");
}

int cmd_stats(const StatsArgs& a, Streams& s) {
  require_file(a.captions, "caption store");
  const auto records = read_captions(a.captions);
  if (records.empty()) throw InputError("caption store is empty: " + a.captions.string());
  std::vector<std::string> texts;
  for (const auto& r : records) texts.push_back(r.caption);
  ConceptVocabulary concepts;
  if (!a.classes.empty()) {
    require_file(a.classes, "class set");
    concepts = ConceptVocabulary(read_class_set(a.classes).classes);
  } else if (!a.concept_vocab.empty()) {
    require_file(a.concept_vocab, "concept vocabulary");
    concepts = ConceptVocabulary::load(a.concept_vocab);
  } else {
    concepts = build_concept_vocab(texts, a.concept_min_freq);
  }
  const Vocabulary vocab = build_vocab(texts, 1, static_cast<std::size_t>(-1));
  const auto examples = prepare_examples(records, nullptr, vocab, concepts, a.max_len);
  const CaptionStats st = caption_statistics(examples, a.batch_size, a.seed);
  json j;
  j["concepts_per_caption"] = st.concepts_per_caption;
  j["unique_concepts_per_batch"] = st.unique_concepts_per_batch;
  j["captions"] = st.captions;
  j["batches"] = st.batches;
  j["concepts"] = concepts.size();
  const auto text = j.dump(2);
  if (!a.out.empty()) write_text_file(a.out, text + "\n");
  s.out << text << "\n";
  return kExitOk;
}

// --- synth -----------------------------------------------------------------

struct SynthArgs {
  SyntheticWorldSpec spec;
  fs::path out;
};

void add_synth(CLI::App& app, SynthArgs& a, PathRoles& roles) {
  auto* sub = app.add_subcommand("synth", "Generate a synthetic world");
  auto& sp = a.spec;
  sub->add_option("--out", a.out, "Output directory")->required();
  sub->add_option("--concepts", sp.concepts, "Number of concepts K (<= 26, <= dim)");
  sub->add_option("--dim", sp.dim, "Feature width d_v");
  sub->add_option("--grid-h", sp.grid_h, "Patch grid height");
  sub->add_option("--grid-w", sp.grid_w, "Patch grid width");
  sub->add_option("--patch-px", sp.patch_px, "Mask pixels per patch side");
  sub->add_option("--min-regions", sp.min_regions, "Minimum regions per image");
  sub->add_option("--max-regions", sp.max_regions, "Maximum regions per image");
  sub->add_option("--noise", sp.noise, "Patch noise sigma");
  sub->add_option("--images", sp.images, "Number of images");
  sub->add_option("--first-image", sp.first_image, "Global index of the first image");
  sub->add_option("--template", sp.caption_templates, "Caption template(s) containing {}");
  sub->add_option("--seed", sp.seed, "Random seed");
  roles.outputs.insert("out");
}

int cmd_synth(const SynthArgs& a, Streams& s) {
  const SyntheticWorld world = generate_synthetic_world(a.spec);
  write_synthetic_world(world, a.out);
  json j;
  j["out"] = a.out.string();
  j["images"] = world.features.size();
  j["concepts"] = world.classes.classes;
  s.out << j.dump(2) << "\n";
  return kExitOk;
}

// --- heatmap / pca -----------------------------------------------------------

struct HeatmapArgs {
  fs::path features, out;
  std::string checkpoint, concept_text, prototypes, image_id;
  std::optional<std::size_t> index;
  std::size_t width = 224, height = 224;
};

void add_heatmap(CLI::App& app, HeatmapArgs& a, PathRoles& roles) {
  auto* sub = app.add_subcommand("heatmap", "Patch similarity to a text concept (PGM)");
  sub->add_option("--features", a.features, "Feature store")->required();
  sub->add_option("--image-id", a.image_id, "Record to render (default: first)");
  sub->add_option("--checkpoint", a.checkpoint, "Trained checkpoint for --concept");
  sub->add_option("--concept", a.concept_text, "Query text");
  sub->add_option("--prototypes", a.prototypes, "JSON list of vectors, with --index");
  sub->add_option("--index", a.index, "Row of --prototypes used as the query");
  sub->add_option("--width", a.width, "Output width");
  sub->add_option("--height", a.height, "Output height");
  sub->add_option("--out", a.out, "Output PGM")->required();
  roles.inputs.insert({"features", "checkpoint", "prototypes"});
  roles.outputs.insert("out");
}

int cmd_heatmap(const HeatmapArgs& a, Streams& s) {
  require_file(a.features, "feature store");
  const FeatureStore store = read_feature_store(a.features);
  const FeatureRecord& rec = find_record(store, a.image_id);
  Heatmap h;
  if (!a.prototypes.empty()) {
    if (!a.index) throw ConfigError("--prototypes needs --index");
    const auto vectors = read_vectors(a.prototypes);
    if (*a.index >= vectors.size()) throw IndexError("--index out of range");
    h = heatmap(rec, store.dim(), vectors[*a.index], a.width, a.height);
  } else {
    if (a.checkpoint.empty() || a.concept_text.empty()) {
      throw ConfigError("heatmap needs --checkpoint with --concept, or --prototypes with --index");
    }
    require_file(a.checkpoint, "checkpoint");
    Model model = load_checkpoint(a.checkpoint);
    h = heatmap(rec, store.dim(), a.concept_text, model.encoder, model.vocab, a.width, a.height);
  }
  write_pgm(h.image, a.out);
  json j;
  j["out"] = a.out.string();
  j["image_id"] = rec.image_id;
  j["width"] = h.image.width;
  j["height"] = h.image.height;
  s.out << j.dump(2) << "\n";
  return kExitOk;
}

struct PcaArgs {
  fs::path features, out;
  std::string image_id;
  std::size_t width = 224, height = 224;
};

void add_pca(CLI::App& app, PcaArgs& a, PathRoles& roles) {
  auto* sub = app.add_subcommand("pca", "Top-3 principal components of patch features (PPM)");
  sub->add_option("--features", a.features, "Feature store")->required();
  sub->add_option("--image-id", a.image_id, "Record to render (default: first)");
  sub->add_option("--width", a.width, "Output width");
  sub->add_option("--height", a.height, "Output height");
  sub->add_option("--out", a.out, "Output PPM")->required();
  roles.inputs.insert("features");
  roles.outputs.insert("out");
}

int cmd_pca(const PcaArgs& a, Streams& s) {
  require_file(a.features, "feature store");
  const FeatureStore store = read_feature_store(a.features);
  const FeatureRecord& rec = find_record(store, a.image_id);
  const RgbImage img = pca_rgb(rec, store.dim(), a.width, a.height);
  write_ppm(img, a.out);
  json j;
  j["out"] = a.out.string();
  j["image_id"] = rec.image_id;
  j["width"] = img.width;
  j["height"] = img.height;
  s.out << j.dump(2) << "\n";
  return kExitOk;
}

// --- degrade ---------------------------------------------------------------

struct DegradeArgs {
  fs::path captions, out;
  double drop_prob = 0.9;
  std::uint64_t seed = 0;
};

void add_degrade(CLI::App& app, DegradeArgs& a, PathRoles& roles) {
  auto* sub = app.add_subcommand("degrade", "Drop concept mentions from captions");
  sub->add_option("--captions", a.captions, "Caption store (JSONL)")->required();
  sub->add_option("--out", a.out, "Output caption store")->required();
  sub->add_option("--drop-prob", a.drop_prob, "Per-mention drop probability")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--seed", a.seed, "Random seed");
  roles.inputs.insert("captions");
  roles.outputs.insert("out");
}

int cmd_degrade(const DegradeArgs& a, Streams& s) {
  require_file(a.captions, "caption store");
  const auto out = degrade_captions(read_captions(a.captions), a.drop_prob, a.seed);
  write_captions(out, a.out);
  json j;
  j["out"] = a.out.string();
  j["records"] = out.size();
  s.out << j.dump(2) << "\n";
  return kExitOk;
}

// --- replay ----------------------------------------------------------------

struct ReplayArgs {
  fs::path manifest;
};

void add_replay(CLI::App& app, ReplayArgs& a, PathRoles& roles) {
  auto* sub = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  sub->add_option("manifest", a.manifest, "Manifest JSON")->required();
  roles.inputs.insert("manifest");
}

std::optional<fs::path> manifest_path(const std::string& sub, const TrainArgs& t,
                                      const EvalArgs& e, const StatsArgs& st, const SynthArgs& sy,
                                      const HeatmapArgs& h, const PcaArgs& p,
                                      const DegradeArgs& d) {
  if (sub == "train") return t.out / "manifest.json";
  if (sub == "synth") return sy.out / "manifest.json";
  if (sub == "eval") return with_suffix(e.out, ".manifest.json");
  if (sub == "heatmap") return with_suffix(h.out, ".manifest.json");
  if (sub == "pca") return with_suffix(p.out, ".manifest.json");
  if (sub == "degrade") return with_suffix(d.out, ".manifest.json");
  if (sub == "stats" && !st.out.empty()) return with_suffix(st.out, ".manifest.json");
  return std::nullopt;
}

int dispatch(const std::vector<std::string>& args, Streams& s, int depth);

int run_replay(const ReplayArgs& a, Streams& s, int depth) {
  require_file(a.manifest, "manifest");
  json m;
  try {
    m = json::parse(read_text_file(a.manifest));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + a.manifest.string() + ": " + e.what());
  }
  if (!m.contains("argv") || !m["argv"].is_array()) {
    throw FormatError("manifest has no argv: " + a.manifest.string());
  }
  const auto argv = m["argv"].get<std::vector<std::string>>();
  if (!argv.empty() && argv.front() == "replay") throw ConfigError("manifest replays a replay");
  return dispatch(argv, s, depth + 1);
}

int dispatch(const std::vector<std::string>& args, Streams& s, int depth) {
  CLI::App app{"Dense text-to-patch alignment: training, evaluation and tools", "dalign"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", version());
  app.get_formatter()->column_width(34);

  PathRoles roles;
  TrainArgs train;
  EvalArgs eval;
  StatsArgs stats;
  SynthArgs synth;
  HeatmapArgs heat;
  PcaArgs pca;
  DegradeArgs degrade;
  ReplayArgs replay;
  add_train(app, train, roles);
  add_eval(app, eval, roles);
  add_stats(app, stats, roles);
  add_synth(app, synth, roles);
  add_heatmap(app, heat, roles);
  add_pca(app, pca, roles);
  add_degrade(app, degrade, roles);
  add_replay(app, replay, roles);
  show_flag_defaults(app);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, s.out, s.err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  if (name != "replay") {
    write_manifest(build_manifest(*sub, roles, args),
                   manifest_path(name, train, eval, stats, synth, heat, pca, degrade), s);
  }
  if (name == "train") return cmd_train(train, s);
  if (name == "eval") return cmd_eval(eval, s);
  if (name == "stats") return cmd_stats(stats, s);
  if (name == "synth") return cmd_synth(synth, s);
  if (name == "heatmap") return cmd_heatmap(heat, s);
  if (name == "pca") return cmd_pca(pca, s);
  if (name == "degrade") return cmd_degrade(degrade, s);
  return run_replay(replay, s, depth);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Streams s{out, err};
  try {
    return dispatch(args, s, 0);
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}

}  // namespace dalign::cli
