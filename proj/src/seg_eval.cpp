#include "dalign/seg_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "dalign/error.hpp"
#include "dalign/parallel.hpp"

namespace dalign {

namespace {

std::vector<double> normalized(std::span<const double> v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::max(std::sqrt(n), kNormalizeEps);
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= n;
  return out;
}

std::string fill(const std::string& tmpl, const std::string& name) {
  const auto at = tmpl.find("{}");
  return tmpl.substr(0, at) + name + tmpl.substr(at + 2);
}

}  // namespace

std::vector<ClassEmbedding> embed_classes(std::span<const std::string> names,
                                          std::span<const std::string> templates,
                                          const TextEncoder& encoder, const Vocabulary& vocab) {
  if (names.empty()) throw ConfigError("embed_classes: no class names");
  if (templates.empty()) throw ConfigError("embed_classes: no templates");
  for (const auto& t : templates) {
    if (t.find("{}") == std::string::npos) {
      throw ConfigError("embed_classes: template without {}: \"" + t + "\"");
    }
  }
  NoGradGuard no_grad;
  const auto d = encoder.config().out_dim;
  std::vector<ClassEmbedding> out;
  for (const auto& name : names) {
    std::vector<TokenizedCaption> batch;
    for (const auto& t : templates) {
      batch.push_back(tokenize(fill(t, name), vocab, encoder.config().max_len));
    }
    const EncodeResult enc = encoder.encode(batch);
    const auto global = enc.global.data();
    std::vector<double> mean(d, 0.0);
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (std::size_t j = 0; j < d; ++j) mean[j] += global[b * d + j];
    for (auto& x : mean) x /= static_cast<double>(batch.size());
    out.push_back({name, normalized(mean)});
  }
  return out;
}

std::vector<ClassEmbedding> class_embeddings_from_vectors(
    std::span<const std::string> names, const std::vector<std::vector<double>>& vectors) {
  if (names.size() != vectors.size()) {
    throw ShapeError("class_embeddings_from_vectors: " + std::to_string(names.size()) +
                     " names for " + std::to_string(vectors.size()) + " vectors");
  }
  std::vector<ClassEmbedding> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.push_back({names[i], normalized(vectors[i])});
  return out;
}

std::string to_string(Protocol p) { return p == Protocol::kForeground ? "fg" : "whole"; }

Protocol parse_protocol(const std::string& text) {
  if (text == "fg" || text == "foreground") return Protocol::kForeground;
  if (text == "whole" || text == "whole-image") return Protocol::kWholeImage;
  throw ConfigError("unknown protocol \"" + text + "\" (expected fg or whole)");
}

void EvalConfig::validate() const {
  if (window == 0) throw ConfigError("window must be positive");
  if (stride == 0 || stride > window) throw ConfigError("stride must lie in [1, window]");
  if (threshold && std::isnan(*threshold)) throw ConfigError("threshold is NaN");
}

std::vector<std::size_t> window_starts(std::size_t extent, std::size_t window, std::size_t stride) {
  if (window >= extent) return {0};
  std::vector<std::size_t> starts;
  for (std::size_t s = 0;; s += stride) {
    if (s + window >= extent) {
      starts.push_back(extent - window);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

std::vector<double> patch_logits(const FeatureRecord& record, std::size_t dim,
                                 std::span<const ClassEmbedding> classes,
                                 const EvalConfig& config) {
  config.validate();
  if (classes.empty()) throw ConfigError("predict: empty class list");
  const std::size_t h = record.grid_h, w = record.grid_w, c = classes.size();
  for (const auto& cls : classes) {
    if (cls.prototype.size() != dim) {
      throw ShapeError("class prototype width " + std::to_string(cls.prototype.size()) +
                       " differs from feature width " + std::to_string(dim));
    }
  }
  // Features are fixed per patch, so each covering window contributes the
  // same cosine; the per-window sum and average are kept explicit.
  std::vector<double> cosine(h * w * c);
  for (std::size_t p = 0; p < h * w; ++p) {
    const auto patch = normalized(std::span<const double>(record.patches).subspan(p * dim, dim));
    for (std::size_t k = 0; k < c; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += patch[j] * classes[k].prototype[j];
      cosine[p * c + k] = s;
    }
  }
  std::vector<double> sum(h * w * c, 0.0);
  std::vector<std::size_t> cover(h * w, 0);
  const auto ys = window_starts(h, config.window, config.stride);
  const auto xs = window_starts(w, config.window, config.stride);
  for (auto y0 : ys)
    for (auto x0 : xs)
      for (std::size_t y = y0; y < std::min(h, y0 + config.window); ++y)
        for (std::size_t x = x0; x < std::min(w, x0 + config.window); ++x) {
          const auto p = y * w + x;
          ++cover[p];
          for (std::size_t k = 0; k < c; ++k) sum[p * c + k] += cosine[p * c + k];
        }
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t k = 0; k < c; ++k) sum[p * c + k] /= static_cast<double>(cover[p]);
  return sum;
}

std::vector<double> upsample_bilinear(std::span<const double> grid, std::size_t h, std::size_t w,
                                      std::size_t channels, std::size_t out_h, std::size_t out_w) {
  if (grid.size() != h * w * channels || h == 0 || w == 0) {
    throw ShapeError("upsample_bilinear: grid size does not match dimensions");
  }
  struct Tap {
    std::size_t i0, i1;
    double t;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> v(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in - 1));
      const auto i0 = static_cast<std::size_t>(std::floor(src));
      const auto i1 = std::min(i0 + 1, in - 1);
      v[o] = {i0, i1, src - static_cast<double>(i0)};
    }
    return v;
  };
  const auto ty = taps(h, out_h);
  const auto tx = taps(w, out_w);
  std::vector<double> out(out_h * out_w * channels);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const auto& a = ty[oy];
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const auto& b = tx[ox];
      const double w00 = (1 - a.t) * (1 - b.t), w01 = (1 - a.t) * b.t;
      const double w10 = a.t * (1 - b.t), w11 = a.t * b.t;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const auto v00 = grid[(a.i0 * w + b.i0) * channels + ch];
        const auto v01 = grid[(a.i0 * w + b.i1) * channels + ch];
        const auto v10 = grid[(a.i1 * w + b.i0) * channels + ch];
        const auto v11 = grid[(a.i1 * w + b.i1) * channels + ch];
        double v = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11;
        // Keep constants exact.
        if (v00 == v01 && v00 == v10 && v00 == v11) v = v00;
        out[(oy * out_w + ox) * channels + ch] = v;
      }
    }
  }
  return out;
}

SegPrediction predict_image(const FeatureRecord& record, std::size_t dim,
                            std::span<const ClassEmbedding> classes, const EvalConfig& config,
                            std::size_t out_w, std::size_t out_h) {
  const auto logits = patch_logits(record, dim, classes, config);
  const auto c = classes.size();
  const auto up = upsample_bilinear(logits, record.grid_h, record.grid_w, c, out_h, out_w);
  SegPrediction pred;
  pred.width = out_w;
  pred.height = out_h;
  pred.labels.resize(out_w * out_h);
  pred.scores.resize(out_w * out_h);
  for (std::size_t i = 0; i < out_w * out_h; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (up[i * c + k] > up[i * c + best]) best = k;
    pred.labels[i] = static_cast<std::uint16_t>(best);
    pred.scores[i] = up[i * c + best];
  }
  return pred;
}

SegPrediction apply_background(SegPrediction pred, double threshold, std::uint16_t background) {
  for (std::size_t i = 0; i < pred.labels.size(); ++i)
    if (pred.scores[i] < threshold) pred.labels[i] = background;
  return pred;
}

void ConfusionMatrix::add(std::size_t truth, std::size_t pred, std::uint64_t count) {
  if (truth >= n_ || pred >= n_) {
    throw IndexError("confusion matrix: label out of range for " + std::to_string(n_) +
                     " classes");
  }
  counts_[truth * n_ + pred] += count;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  if (o.n_ != n_) throw ShapeError("confusion matrix: class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += o.counts_[i];
  return *this;
}

void accumulate(ConfusionMatrix& cm, const SegPrediction& pred, const Mask& mask,
                Protocol protocol, std::size_t classes) {
  if (pred.width != mask.width || pred.height != mask.height) {
    throw ShapeError("prediction is " + std::to_string(pred.width) + "x" +
                     std::to_string(pred.height) + " but mask is " + std::to_string(mask.width) +
                     "x" + std::to_string(mask.height));
  }
  for (std::size_t i = 0; i < mask.pixels.size(); ++i) {
    std::size_t truth = mask.pixels[i];
    if (truth == kIgnoreLabel) {
      if (protocol == Protocol::kForeground) continue;
      truth = classes;
    } else if (truth >= classes) {
      throw InputError("mask label " + std::to_string(truth) + " outside " +
                       std::to_string(classes) + " evaluation classes");
    }
    cm.add(truth, pred.labels[i]);
  }
}

std::string MIoUReport::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < names.size(); ++i) {
    per_class[names[i]] = iou[i] ? nlohmann::ordered_json(*iou[i]) : nlohmann::ordered_json(nullptr);
  }
  j["per_class"] = per_class;
  j["miou"] = miou;
  j["pixels_scored"] = pixels_scored;
  j["protocol"] = to_string(protocol);
  if (threshold) j["threshold"] = *threshold;
  return j.dump(2);
}

MIoUReport miou(const ConfusionMatrix& cm, std::span<const std::string> names,
                std::span<const std::size_t> ignore, Protocol protocol,
                std::optional<double> threshold) {
  const auto n = cm.classes();
  if (names.size() != n) throw ShapeError("miou: class name count differs from matrix size");
  MIoUReport r;
  r.names.assign(names.begin(), names.end());
  r.iou.resize(n);
  r.protocol = protocol;
  r.threshold = threshold;
  r.pixels_scored = cm.total();
  if (r.pixels_scored == 0) throw ContractError("miou: no pixel was scored");
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n; ++c) {
    std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (std::size_t o = 0; o < n; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    if (tp + fp + fn == 0) continue;
    r.iou[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    if (std::find(ignore.begin(), ignore.end(), c) != ignore.end()) continue;
    sum += *r.iou[c];
    ++counted;
  }
  r.miou = counted ? sum / static_cast<double>(counted) : 0.0;
  return r;
}

double calibrate_threshold(std::span<const SegPrediction> predictions,
                           std::span<const Mask> masks, std::size_t classes,
                           std::span<const double> grid) {
  if (grid.empty()) throw ConfigError("calibrate_threshold: empty grid");
  if (predictions.size() != masks.size()) {
    throw ShapeError("calibrate_threshold: prediction and mask counts differ");
  }
  std::vector<std::string> names(classes + 1);
  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  double best = sorted.front();
  double best_miou = -1.0;
  for (double t : sorted) {
    ConfusionMatrix cm(classes + 1);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
      accumulate(cm, apply_background(predictions[i], t, static_cast<std::uint16_t>(classes)),
                 masks[i], Protocol::kWholeImage, classes);
    }
    const double m = miou(cm, names).miou;
    if (m > best_miou) {
      best_miou = m;
      best = t;
    }
  }
  return best;
}

std::vector<double> linear_grid(double lo, double hi, std::size_t count) {
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) {
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return g;
}

EvalResult evaluate(const FeatureStore& store, std::span<const Mask> masks,
                    std::span<const ClassEmbedding> classes, const EvalConfig& config) {
  config.validate();
  if (masks.size() != store.size()) {
    throw InputError("evaluate: " + std::to_string(masks.size()) + " masks for " +
                     std::to_string(store.size()) + " feature records");
  }
  if (config.protocol == Protocol::kWholeImage && !config.threshold) {
    throw ConfigError("whole-image protocol needs a background threshold");
  }
  const auto c = classes.size();
  const auto n_cls = config.protocol == Protocol::kWholeImage ? c + 1 : c;
  EvalResult result;
  result.predictions.resize(store.size());
  std::vector<ConfusionMatrix> partial(store.size(), ConfusionMatrix(n_cls));
  parallel_for(store.size(), [&](std::size_t i) {
    auto pred = predict_image(store[i], store.dim(), classes, config, masks[i].width,
                              masks[i].height);
    const auto scored = config.protocol == Protocol::kWholeImage
                            ? apply_background(pred, *config.threshold, static_cast<std::uint16_t>(c))
                            : pred;
    accumulate(partial[i], scored, masks[i], config.protocol, c);
    result.predictions[i] = std::move(pred);
  });
  ConfusionMatrix cm(n_cls);
  for (const auto& p : partial) cm += p;
  std::vector<std::string> names;
  for (const auto& cls : classes) names.push_back(cls.name);
  if (config.protocol == Protocol::kWholeImage) names.push_back("background");
  result.report = miou(cm, names, {}, config.protocol,
                       config.protocol == Protocol::kWholeImage ? config.threshold : std::nullopt);
  return result;
}

}  // namespace dalign
