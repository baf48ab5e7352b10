#include "dalign/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "dalign/binary_io.hpp"
#include "dalign/error.hpp"
#include "dalign/rng.hpp"

namespace dalign {

namespace {

std::string image_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%06zu", index);
  return buf;
}

// Gram-Schmidt on seeded Gaussian draws.
std::vector<std::vector<double>> orthonormal_means(std::size_t k, std::size_t dim, Rng& rng) {
  std::vector<std::vector<double>> out;
  while (out.size() < k) {
    std::vector<double> v(dim);
    for (auto& x : v) x = rng.normal();
    for (const auto& u : out) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * u[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * u[i];
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    if (n < 1e-6) continue;
    for (auto& x : v) x /= n;
    out.push_back(std::move(v));
  }
  return out;
}

// Guillotine splits of the grid into `count` rectangles.
std::vector<Rect> tile(std::size_t h, std::size_t w, std::size_t count, Rng& rng) {
  std::vector<Rect> rects{{0, 0, h, w, 0}};
  while (rects.size() < count) {
    // Split the largest splittable rectangle (first on ties).
    std::size_t best = rects.size();
    std::size_t best_area = 0;
    for (std::size_t i = 0; i < rects.size(); ++i) {
      const auto& r = rects[i];
      const auto rh = r.y1 - r.y0, rw = r.x1 - r.x0;
      if ((rh >= 2 || rw >= 2) && rh * rw > best_area) {
        best = i;
        best_area = rh * rw;
      }
    }
    if (best == rects.size()) break;
    Rect r = rects[best];
    const auto rh = r.y1 - r.y0, rw = r.x1 - r.x0;
    const bool horizontal = rh > rw || (rh == rw && rng.below(2) == 0);
    Rect a = r, b = r;
    if (horizontal) {
      const auto cut = r.y0 + 1 + static_cast<std::size_t>(rng.below(rh - 1));
      a.y1 = cut;
      b.y0 = cut;
    } else {
      const auto cut = r.x0 + 1 + static_cast<std::size_t>(rng.below(rw - 1));
      a.x1 = cut;
      b.x0 = cut;
    }
    rects[best] = a;
    rects.push_back(b);
  }
  return rects;
}

std::string fill_template(const std::string& tmpl, const std::string& text) {
  const auto at = tmpl.find("{}");
  return tmpl.substr(0, at) + text + tmpl.substr(at + 2);
}

}  // namespace

const std::vector<std::string>& concept_names() {
  static const std::vector<std::string> names{
      "cow",   "tree", "dog",   "car",   "house",  "boat",  "bird",  "horse", "road",
      "sky",   "grass", "bus",  "sheep", "table",  "bottle", "person", "bike", "train",
      "plant", "sofa", "wall",  "rock",  "flower", "bench", "lamp",  "chair"};
  return names;
}

void SyntheticWorldSpec::validate() const {
  if (concepts == 0 || concepts > concept_names().size()) {
    throw ConfigError("synthetic world: concept count must be in [1, 26]");
  }
  if (concepts > dim) throw ConfigError("synthetic world: more concepts than feature dimensions");
  if (grid_h == 0 || grid_w == 0 || grid_h > 65535 || grid_w > 65535) {
    throw ConfigError("synthetic world: invalid grid");
  }
  if (min_regions == 0 || min_regions > max_regions) {
    throw ConfigError("synthetic world: need 1 <= min_regions <= max_regions");
  }
  if (max_regions > grid_h * grid_w || max_regions > concepts) {
    throw ConfigError("synthetic world: max_regions exceeds grid capacity or concept count");
  }
  if (!(noise >= 0.0)) throw ConfigError("synthetic world: noise must be non-negative");
  if (patch_px == 0) throw ConfigError("synthetic world: patch_px must be positive");
  if (caption_templates.empty()) throw ConfigError("synthetic world: no caption templates");
  for (const auto& t : caption_templates) {
    if (t.find("{}") == std::string::npos) {
      throw ConfigError("synthetic world: caption template without {}");
    }
  }
}

SyntheticWorld generate_synthetic_world(const SyntheticWorldSpec& spec) {
  spec.validate();
  SyntheticWorld world;
  Rng mean_rng(derive_seed(spec.seed, 0));
  world.means = orthonormal_means(spec.concepts, spec.dim, mean_rng);
  world.classes.classes.assign(concept_names().begin(),
                               concept_names().begin() + static_cast<std::ptrdiff_t>(spec.concepts));
  // Class prompts name one concept the way captions do.
  for (const auto& t : spec.caption_templates) {
    world.classes.templates.push_back(fill_template(t, "a {}"));
  }
  world.features = FeatureStore(static_cast<std::uint32_t>(spec.dim));

  const auto d = spec.dim;
  for (std::size_t n = 0; n < spec.images; ++n) {
    const auto global_index = spec.first_image + n;
    Rng rng(derive_seed(spec.seed, 1 + global_index));
    const auto count =
        spec.min_regions + static_cast<std::size_t>(rng.below(spec.max_regions - spec.min_regions + 1));
    auto rects = tile(spec.grid_h, spec.grid_w, count, rng);
    std::vector<std::size_t> pool(spec.concepts);
    for (std::size_t k = 0; k < pool.size(); ++k) pool[k] = k;
    rng.shuffle(pool);
    for (std::size_t r = 0; r < rects.size(); ++r) rects[r].concept_index = pool[r];

    FeatureRecord rec;
    rec.image_id = image_id(global_index);
    rec.grid_h = static_cast<std::uint16_t>(spec.grid_h);
    rec.grid_w = static_cast<std::uint16_t>(spec.grid_w);
    rec.patches.assign(spec.grid_h * spec.grid_w * d, 0.0);
    std::vector<std::size_t> owner(spec.grid_h * spec.grid_w);
    for (const auto& r : rects)
      for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x) owner[y * spec.grid_w + x] = r.concept_index;
    for (std::size_t p = 0; p < owner.size(); ++p) {
      const auto& mu = world.means[owner[p]];
      for (std::size_t j = 0; j < d; ++j) rec.patches[p * d + j] = mu[j] + spec.noise * rng.normal();
    }
    rec.cls.assign(d, 0.0);
    for (std::size_t p = 0; p < owner.size(); ++p)
      for (std::size_t j = 0; j < d; ++j) rec.cls[j] += rec.patches[p * d + j];
    for (auto& v : rec.cls) v /= static_cast<double>(owner.size());

    Mask mask(spec.grid_w * spec.patch_px, spec.grid_h * spec.patch_px);
    for (std::size_t y = 0; y < mask.height; ++y)
      for (std::size_t x = 0; x < mask.width; ++x)
        mask.at(x, y) = static_cast<std::uint8_t>(owner[(y / spec.patch_px) * spec.grid_w + x / spec.patch_px]);

    std::string mentions;
    for (std::size_t r = 0; r < rects.size(); ++r) {
      if (r) mentions += " and ";
      mentions += "a " + concept_names()[rects[r].concept_index];
    }
    const auto& tmpl = spec.caption_templates[rng.below(spec.caption_templates.size())];
    world.captions.push_back({rec.image_id, fill_template(tmpl, mentions), tmpl, "synthetic-world"});
    world.features.add(std::move(rec));
    world.masks.push_back(std::move(mask));
    world.regions.push_back(std::move(rects));
  }
  return world;
}

void write_synthetic_world(const SyntheticWorld& world, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "masks");
  write_feature_store(world.features, dir / "features.dvf");
  write_captions(world.captions, dir / "captions.jsonl");
  write_class_set(world.classes, dir / "classes.json");
  nlohmann::json means = world.means;
  write_text_file(dir / "means.json", means.dump() + "\n");
  for (std::size_t i = 0; i < world.masks.size(); ++i) {
    write_pgm(world.masks[i], dir / "masks" / (world.features[i].image_id + ".pgm"));
  }
}

std::vector<Mask> read_masks(const FeatureStore& store, const std::filesystem::path& dir) {
  std::vector<Mask> out;
  out.reserve(store.size());
  for (const auto& r : store.records()) out.push_back(read_pgm(dir / (r.image_id + ".pgm")));
  return out;
}

}  // namespace dalign
