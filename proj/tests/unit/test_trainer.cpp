#include <doctest.h>

#include <cmath>
#include <limits>

#include "dalign/binary_io.hpp"
#include "dalign/checkpoint.hpp"
#include "dalign/error.hpp"
#include "dalign/synth.hpp"
#include "dalign/trainer.hpp"
#include "unit/helpers.hpp"

using namespace dalign;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.width = 8;
  c.layers = 1;
  c.heads = 2;
  c.max_len = 12;
  c.batch_size = 8;
  c.epochs = 3;
  c.adam.lr = 1e-2;
  c.concept_min_freq = 1;
  c.seed = 5;
  return c;
}

// A written synthetic world small enough for many training runs.
std::filesystem::path tiny_world(const std::string& name) {
  const auto dir = test::temp_dir(name);
  SyntheticWorldSpec spec;
  spec.concepts = 4;
  spec.dim = 6;
  spec.grid_h = 4;
  spec.grid_w = 4;
  spec.images = 24;
  spec.seed = 9;
  write_synthetic_world(generate_synthetic_world(spec), dir / "world");
  return dir;
}

std::vector<CaptionRecord> plain(std::vector<std::string> texts) {
  std::vector<CaptionRecord> out;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    out.push_back({"img_" + std::to_string(i), texts[i], "", ""});
  }
  return out;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("adam single step") {
    std::vector<NamedTensor> params{{"w", Tensor::from({1}, {1.0}, true)}};
    Adam adam(params);
    params[0].tensor.mutable_grad()[0] = 1.0;
    AdamConfig cfg;
    adam.step(params, cfg, 0.1);
    CHECK(params[0].tensor.at(0) == doctest::Approx(0.900000001).epsilon(1e-12));
    CHECK(adam.steps() == 1);
  }

  TEST_CASE("adam rejects a non-finite gradient without updating") {
    std::vector<NamedTensor> params{{"a", Tensor::from({2}, {1.0, 2.0}, true)},
                                    {"b", Tensor::from({1}, {3.0}, true)}};
    Adam adam(params);
    params[0].tensor.mutable_grad()[0] = 0.5;
    params[1].tensor.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
    AdamConfig cfg;
    CHECK_THROWS_WITH_AS(adam.step(params, cfg, 0.1), doctest::Contains("b"), NumericError);
    CHECK(params[0].tensor.at(0) == 1.0);
    CHECK(adam.steps() == 0);
  }

  TEST_CASE("gradient clipping") {
    std::vector<NamedTensor> params{{"a", Tensor::from({2}, {0, 0}, true)}};
    params[0].tensor.mutable_grad()[0] = 3.0;
    params[0].tensor.mutable_grad()[1] = 4.0;
    CHECK(grad_norm(params) == doctest::Approx(5.0));
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
    CHECK(grad_norm(params) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(grad_norm(params) == doctest::Approx(1.0).epsilon(1e-6));
  }

  TEST_CASE("caption statistics") {
    auto records = plain({"a cow and a dog.", "a cow, a dog and a tree.", "a tree.",
                          "a dog, a tree and the grass."});
    std::vector<std::string> texts;
    for (const auto& r : records) texts.push_back(r.caption);
    Vocabulary vocab = build_vocab(texts, 1, 100);
    ConceptVocabulary concepts({"cow", "dog", "grass", "tree"});
    auto examples = prepare_examples(records, nullptr, vocab, concepts, 32);
    CaptionStats s = caption_statistics(examples, 4, 0);
    CHECK(s.concepts_per_caption == doctest::Approx(2.25));
    CHECK(s.unique_concepts_per_batch == doctest::Approx(4.0));
    CHECK(s.batches == 1);

    auto repeated = plain({"a cow and a cow.", "a cow."});
    auto rex = prepare_examples(repeated, nullptr, vocab, concepts, 32);
    CaptionStats r = caption_statistics(rex, 2, 0);
    CHECK(r.concepts_per_caption == doctest::Approx(1.5));
    CHECK(r.unique_concepts_per_batch == doctest::Approx(1.0));
  }

  TEST_CASE("unique concepts per batch never exceed mentions per batch") {
    auto records = plain({"a cow and a dog.", "a cow.", "a tree and a cow.", "a dog.",
                          "the grass.", "a cow and a tree and a dog."});
    std::vector<std::string> texts;
    for (const auto& r : records) texts.push_back(r.caption);
    Vocabulary vocab = build_vocab(texts, 1, 100);
    ConceptVocabulary concepts({"cow", "dog", "grass", "tree"});
    auto examples = prepare_examples(records, nullptr, vocab, concepts, 32);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      CaptionStats s = caption_statistics(examples, 3, seed);
      CHECK(s.unique_concepts_per_batch <= 3.0 * s.concepts_per_caption + 1e-12);
      CHECK(s.unique_concepts_per_batch <= 4.0);
    }
  }

  TEST_CASE("epoch batches are a seeded partition") {
    auto a = epoch_batches(10, 4, 1, 1);
    CHECK(a == epoch_batches(10, 4, 1, 1));
    CHECK(a != epoch_batches(10, 4, 1, 2));
    std::vector<int> seen(10, 0);
    for (const auto& b : a)
      for (auto i : b) ++seen[i];
    for (int s : seen) CHECK(s == 1);
    // A trailing batch of one is dropped.
    auto d = epoch_batches(9, 4, 1, 1);
    CHECK(d.size() == 2);
  }

  TEST_CASE("training is deterministic and lowers the loss") {
    const auto dir = tiny_world("train_det");
    const auto world = dir / "world";
    FitOptions o1, o2;
    o1.out_dir = dir / "run1";
    o2.out_dir = dir / "run2";
    auto r1 = fit(tiny_config(), world / "features.dvf", world / "captions.jsonl", o1);
    auto r2 = fit(tiny_config(), world / "features.dvf", world / "captions.jsonl", o2);
    REQUIRE(r1.metrics.size() == 4);
    CHECK(read_file(r1.checkpoint) == read_file(r2.checkpoint));
    CHECK(read_text_file(o1.out_dir / "metrics.jsonl") ==
          read_text_file(o2.out_dir / "metrics.jsonl"));
    CHECK(r1.metrics.back().total < r1.metrics.front().total);
    CHECK(r1.metrics.front().epoch == 0);
    CHECK(r1.metrics.back().epoch == 3);
    CHECK(std::filesystem::exists(o1.out_dir / "epoch_0002.dack"));
  }

  TEST_CASE("resuming matches an uninterrupted run") {
    const auto dir = tiny_world("train_resume");
    const auto world = dir / "world";
    TrainConfig full = tiny_config();
    full.epochs = 4;
    FitOptions straight;
    straight.out_dir = dir / "straight";
    auto a = fit(full, world / "features.dvf", world / "captions.jsonl", straight);

    TrainConfig half = tiny_config();
    half.epochs = 2;
    FitOptions first;
    first.out_dir = dir / "split";
    fit(half, world / "features.dvf", world / "captions.jsonl", first);
    FitOptions second;
    second.out_dir = dir / "split";
    second.resume = dir / "split" / "checkpoint.dack";
    auto b = fit(full, world / "features.dvf", world / "captions.jsonl", second);

    CHECK(read_file(a.checkpoint) == read_file(b.checkpoint));
    CHECK(read_text_file(straight.out_dir / "metrics.jsonl") ==
          read_text_file(first.out_dir / "metrics.jsonl"));
  }

  TEST_CASE("lambda = 0 leaves the concept classifier untouched") {
    const auto dir = tiny_world("train_lambda0");
    const auto world = dir / "world";
    TrainConfig c = tiny_config();
    c.alignment.lambda = 0.0;
    FitOptions o;
    o.out_dir = dir / "run";
    auto r = fit(c, world / "features.dvf", world / "captions.jsonl", o);
    Model trained = load_checkpoint(r.checkpoint);
    Model fresh(c, trained.vocab, trained.concepts, 6);
    CHECK(std::vector<double>(trained.head.classifier().data().begin(),
                              trained.head.classifier().data().end()) ==
          std::vector<double>(fresh.head.classifier().data().begin(),
                              fresh.head.classifier().data().end()));
  }

  TEST_CASE("checkpoint round trip and corruption") {
    std::vector<std::string> corpus{"a cow.", "a dog."};
    TrainConfig c = tiny_config();
    Model m(c, build_vocab(corpus, 1, 100), ConceptVocabulary({"cow", "dog"}), 5);
    m.epoch = 3;
    m.step = 17;
    m.adam.set_steps(17);
    m.adam.first_moments()[0][0] = 0.25;
    const auto bytes = encode_checkpoint(m);
    Model back = decode_checkpoint(bytes);
    CHECK(back.config == m.config);
    CHECK(back.vocab == m.vocab);
    CHECK(back.concepts == m.concepts);
    CHECK(back.epoch == 3);
    CHECK(back.step == 17);
    CHECK(encode_checkpoint(back) == bytes);

    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(trailing), FormatError);
  }

  TEST_CASE("a non-finite loss aborts the epoch") {
    const auto dir = tiny_world("train_nan");
    const auto world = dir / "world";
    const FeatureStore store = read_feature_store(world / "features.dvf");
    const auto records = read_captions(world / "captions.jsonl");
    std::vector<std::string> texts;
    for (const auto& r : records) texts.push_back(r.caption);
    TrainConfig c = tiny_config();
    Model m(c, build_vocab(texts, 1, 100), build_concept_vocab(texts, 1), store.dim());
    auto examples = prepare_examples(records, &store, m.vocab, m.concepts, c.max_len);
    m.head.log_scale().mutable_data()[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(train_epoch(m, examples, store), NumericError);
  }

  TEST_CASE("fit rejects bad inputs before training") {
    const auto dir = tiny_world("train_inputs");
    const auto world = dir / "world";
    FitOptions o;
    o.out_dir = dir / "run";
    CHECK_THROWS_AS(fit(tiny_config(), world / "missing.dvf", world / "captions.jsonl", o), IoError);
    write_text_file(dir / "orphan.jsonl", "{\"image_id\": \"nope\", \"caption\": \"a cow.\"}\n");
    CHECK_THROWS_AS(fit(tiny_config(), world / "features.dvf", dir / "orphan.jsonl", o), InputError);
    CHECK_FALSE(std::filesystem::exists(o.out_dir / "checkpoint.dack"));
  }
}
