#include <doctest.h>

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "dalign/binary_io.hpp"
#include "dalign/captions.hpp"
#include "dalign/class_set.hpp"
#include "dalign/concepts.hpp"
#include "dalign/error.hpp"
#include "dalign/feature_store.hpp"
#include "dalign/image_io.hpp"
#include "dalign/synth.hpp"
#include "common/goldens.hpp"
#include "unit/helpers.hpp"

using namespace dalign;

namespace {

FeatureStore small_store() { return test::golden_feature_store(); }

std::size_t count_mentions(const std::vector<CaptionRecord>& records) {
  std::size_t n = 0;
  for (const auto& r : records) {
    for (const auto& np : extract_noun_phrases(r.caption)) n += np.head != "photo";
  }
  return n;
}

}  // namespace

TEST_SUITE("data_io") {
  TEST_CASE("feature store round trip") {
    const auto store = small_store();
    const auto back = decode_feature_store(encode_feature_store(store));
    CHECK(back.dim() == 3);
    REQUIRE(back.size() == 2);
    CHECK(back[0].image_id == "img_a");
    CHECK(back[1].image_id == store[1].image_id);
    CHECK(back[1].grid_h == 2);
    CHECK(back[0].patches == store[0].patches);
    CHECK(back[1].cls == store[1].cls);
    CHECK(back.find("img_a") == &back[0]);
    CHECK(back.find("zzz") == nullptr);

    const auto dir = test::temp_dir("dvf");
    write_feature_store(store, dir / "s.dvf");
    CHECK(encode_feature_store(read_feature_store(dir / "s.dvf")) == encode_feature_store(store));
  }

  TEST_CASE("feature store golden file") {
    CHECK(encode_feature_store(small_store()) == read_file(test::data_path("golden/small.dvf")));
  }

  TEST_CASE("empty feature store") {
    FeatureStore empty(7);
    const auto bytes = encode_feature_store(empty);
    CHECK(bytes.size() == 20);
    const auto back = decode_feature_store(bytes);
    CHECK(back.size() == 0);
    CHECK(back.dim() == 7);
  }

  TEST_CASE("feature store errors") {
    FeatureStore s = small_store();
    FeatureRecord dup{"img_a", 1, 1, {0, 0, 0}, {0, 0, 0}};
    CHECK_THROWS_AS(s.add(dup), FormatError);
    FeatureRecord wrong{"img_c", 1, 1, {0, 0}, {0, 0, 0}};
    CHECK_THROWS_AS(s.add(wrong), FormatError);

    auto bytes = encode_feature_store(small_store());
    auto magic = bytes;
    magic[3] = '2';
    CHECK_THROWS_AS(decode_feature_store(magic), FormatError);
    auto version = bytes;
    version[4] = 9;
    CHECK_THROWS_AS(decode_feature_store(version), FormatError);
    for (std::size_t cut : {std::size_t{3}, std::size_t{19}, bytes.size() - 1}) {
      auto truncated = bytes;
      truncated.resize(cut);
      CHECK_THROWS_AS(decode_feature_store(truncated), FormatError);
    }
    CHECK_THROWS_AS(read_feature_store(test::temp_dir("dvf_missing") / "none.dvf"), IoError);
  }

  TEST_CASE("caption store parsing") {
    const std::string text =
        "{\"image_id\": \"a\", \"caption\": \"a cow.\", \"extra\": 1}\n"
        "\n"
        "{\"image_id\": \"b\", \"caption\": \"x\", \"prompt\": \"p {}\", \"source\": \"raw\"}\n";
    auto recs = parse_captions(text);
    REQUIRE(recs.size() == 2);
    CHECK(recs[0] == CaptionRecord{"a", "a cow.", "", ""});
    CHECK(recs[1].prompt == "p {}");
    CHECK(parse_captions(format_captions(recs)) == recs);

    CHECK_THROWS_WITH_AS(parse_captions("{\"image_id\": \"a\", \"caption\": \"c\"}\n{oops\n"),
                         doctest::Contains("line 2"), FormatError);
    CHECK_THROWS_AS(parse_captions("{\"caption\": \"c\"}\n"), FormatError);
    CHECK_THROWS_AS(parse_captions("[1, 2]\n"), FormatError);
  }

  TEST_CASE("captions must resolve against the store") {
    std::vector<CaptionRecord> ok{{"img_a", "a cow.", "", ""}};
    CHECK_NOTHROW(check_captions_resolve(ok, small_store()));
    std::vector<CaptionRecord> bad{{"img_a", "a cow.", "", ""}, {"img_q", "x", "", ""}};
    CHECK_THROWS_WITH_AS(check_captions_resolve(bad, small_store()), doctest::Contains("img_q"),
                         InputError);
  }

  TEST_CASE("netpbm round trips") {
    GrayImage g(3, 2);
    g.pixels = {0, 1, 2, 253, 254, 255};
    CHECK(decode_pgm(encode_pgm(g)) == g);
    const std::string header = "P5\n3 2\n255\n";
    auto bytes = encode_pgm(g);
    CHECK(std::string(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header.size())) ==
          header);

    RgbImage c{2, 1, {255, 0, 0, 0, 128, 255}};
    CHECK(decode_ppm(encode_ppm(c)) == c);

    const std::string commented = "P5\n# made by hand\n2 1\n255\n\x07\x08";
    GrayImage h = decode_pgm({commented.begin(), commented.end()});
    CHECK(h.width == 2);
    CHECK(h.at(1, 0) == 8);

    auto short_pgm = encode_pgm(g);
    short_pgm.pop_back();
    CHECK_THROWS_AS(decode_pgm(short_pgm), FormatError);
    const std::string p6 = "P6\n1 1\n255\nabc";
    CHECK_THROWS_AS(decode_pgm({p6.begin(), p6.end()}), FormatError);
    const std::string deep = "P5\n1 1\n65535\nab";
    CHECK_THROWS_AS(decode_pgm({deep.begin(), deep.end()}), FormatError);
  }

  TEST_CASE("class set") {
    ClassSet s = parse_class_set(R"({"classes": ["cow", "tree"]})");
    CHECK(s.templates == default_templates());
    CHECK(default_templates().size() == 7);
    CHECK_FALSE(s.background_threshold.has_value());
    s.background_threshold = 0.25;
    s.templates = {"a {}."};
    CHECK(parse_class_set(format_class_set(s)) == s);

    CHECK_THROWS_AS(parse_class_set(R"({"classes": []})"), ConfigError);
    CHECK_THROWS_AS(parse_class_set(R"({"classes": ["a"], "templates": ["no slot"]})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_class_set(R"({"templates": ["{}"]})"), FormatError);
    CHECK_THROWS_AS(parse_class_set("{"), FormatError);
  }

  TEST_CASE("synthetic world: noiseless patches sit on their means") {
    SyntheticWorldSpec spec;
    spec.noise = 0.0;
    spec.images = 6;
    const auto w = generate_synthetic_world(spec);
    for (std::size_t i = 0; i < w.features.size(); ++i) {
      const auto& rec = w.features[i];
      for (const auto& r : w.regions[i]) {
        for (std::size_t y = r.y0; y < r.y1; ++y)
          for (std::size_t x = r.x0; x < r.x1; ++x) {
            const double* p = rec.patches.data() + (y * rec.grid_w + x) * spec.dim;
            std::size_t best = 0;
            double best_d = 1e300;
            for (std::size_t k = 0; k < spec.concepts; ++k) {
              double d = 0.0;
              for (std::size_t j = 0; j < spec.dim; ++j) d += std::pow(p[j] - w.means[k][j], 2);
              if (d < best_d) {
                best_d = d;
                best = k;
              }
            }
            CHECK(best == r.concept_index);
          }
      }
    }
  }

  TEST_CASE("synthetic world: nearest mean at noise 0.1") {
    SyntheticWorldSpec spec;
    spec.noise = 0.1;
    spec.images = 16;
    const auto w = generate_synthetic_world(spec);
    std::size_t right = 0, total = 0;
    for (std::size_t i = 0; i < w.features.size(); ++i) {
      const auto& rec = w.features[i];
      for (std::size_t y = 0; y < rec.grid_h; ++y)
        for (std::size_t x = 0; x < rec.grid_w; ++x) {
          const double* p = rec.patches.data() + (y * rec.grid_w + x) * spec.dim;
          std::size_t best = 0;
          double best_s = -1e300;
          for (std::size_t k = 0; k < spec.concepts; ++k) {
            double s = 0.0;
            for (std::size_t j = 0; j < spec.dim; ++j) s -= std::pow(p[j] - w.means[k][j], 2);
            if (s > best_s) {
              best_s = s;
              best = k;
            }
          }
          const auto label = w.masks[i].at(x * spec.patch_px, y * spec.patch_px);
          right += best == label;
          ++total;
        }
    }
    CHECK(static_cast<double>(right) / static_cast<double>(total) >= 0.99);
  }

  TEST_CASE("synthetic world: orthonormal means, exact captions, deterministic") {
    SyntheticWorldSpec spec;
    spec.images = 10;
    spec.seed = 4;
    const auto w = generate_synthetic_world(spec);
    for (std::size_t a = 0; a < spec.concepts; ++a)
      for (std::size_t b = 0; b < spec.concepts; ++b) {
        double dot = 0.0;
        for (std::size_t j = 0; j < spec.dim; ++j) dot += w.means[a][j] * w.means[b][j];
        CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) <= 1e-12);
      }

    for (std::size_t i = 0; i < w.captions.size(); ++i) {
      std::set<std::string> named, present;
      for (const auto& np : extract_noun_phrases(w.captions[i].caption)) {
        if (np.head != "photo") named.insert(np.head);
      }
      for (const auto& r : w.regions[i]) present.insert(concept_names()[r.concept_index]);
      CHECK(named == present);
      CHECK(w.captions[i].source == "synthetic-world");
      CHECK(w.captions[i].prompt == "a photo of {}.");
    }
    CHECK(w.classes.classes ==
          std::vector<std::string>(concept_names().begin(), concept_names().begin() + 8));

    const auto again = generate_synthetic_world(spec);
    CHECK(encode_feature_store(again.features) == encode_feature_store(w.features));
    CHECK(again.captions == w.captions);
    CHECK(again.masks == w.masks);

    SyntheticWorldSpec later = spec;
    later.first_image = 10;
    later.images = 2;
    const auto split = generate_synthetic_world(later);
    CHECK(split.means == w.means);
    CHECK(split.captions[0].image_id == "img_000010");

    SyntheticWorldSpec bad;
    bad.concepts = 27;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("synthetic world on disk") {
    SyntheticWorldSpec spec;
    spec.images = 3;
    const auto w = generate_synthetic_world(spec);
    const auto dir = test::temp_dir("synth_disk");
    write_synthetic_world(w, dir);
    const auto store = read_feature_store(dir / "features.dvf");
    CHECK(read_captions(dir / "captions.jsonl") == w.captions);
    CHECK(read_masks(store, dir / "masks") == w.masks);
    CHECK(read_class_set(dir / "classes.json") == w.classes);
  }

  TEST_CASE("degrading captions") {
    SyntheticWorldSpec spec;
    spec.images = 200;
    const auto w = generate_synthetic_world(spec);
    CHECK(degrade_captions(w.captions, 0.0, 1) == w.captions);
    for (const auto& r : degrade_captions(w.captions, 1.0, 1)) CHECK(r.caption == "a photo.");
    CHECK_THROWS_AS(degrade_captions(w.captions, 1.5, 1), ParameterError);

    const auto d = degrade_captions(w.captions, 0.96, 3);
    CHECK(d == degrade_captions(w.captions, 0.96, 3));
    const double kept =
        static_cast<double>(count_mentions(d)) / static_cast<double>(count_mentions(w.captions));
    CHECK(kept > 0.0);
    CHECK(kept < 0.1);

    std::vector<CaptionRecord> raw{{"x", "a brown cow on the grass", "", "raw"}};
    CHECK(degrade_captions(raw, 1.0, 0)[0].caption == "a photo.");
    CHECK(degrade_captions(raw, 0.0, 0)[0].caption == raw[0].caption);
  }
}
