#include <doctest.h>

#include <nlohmann/json.hpp>

#include "dalign/binary_io.hpp"
#include "dalign/concepts.hpp"
#include "dalign/error.hpp"
#include "unit/helpers.hpp"

using namespace dalign;

namespace {

std::vector<PosTag> tags_of(std::vector<std::string> words) { return pos_tag(words); }

std::vector<std::string> heads(const std::vector<NounPhrase>& nps) {
  std::vector<std::string> out;
  for (const auto& np : nps) out.push_back(np.head);
  return out;
}

std::string text_of(const std::string& s, const NounPhrase& np) {
  return s.substr(np.span.begin, np.span.end - np.span.begin);
}

}  // namespace

TEST_SUITE("concepts") {
  TEST_CASE("pos_tag examples") {
    using enum PosTag;
    CHECK(tags_of({"a", "cow", "on", "the", "grass"}) ==
          std::vector<PosTag>{kDet, kNoun, kAdp, kDet, kNoun});
    CHECK(tags_of({"quickly"}) == std::vector<PosTag>{kAdv});
    CHECK(tags_of({","}) == std::vector<PosTag>{kPunct});
    CHECK(tags_of({"42"}) == std::vector<PosTag>{kNum});
    CHECK(tags_of({"she", "is", "running"}) == std::vector<PosTag>{kPron, kVerb, kVerb});
    CHECK(tags_of({"a", "sleeping", "cat"}) == std::vector<PosTag>{kDet, kAdj, kNoun});
    CHECK(tags_of({"blorf"}) == std::vector<PosTag>{kNoun});
  }

  TEST_CASE("chunk examples") {
    const std::string s = "a brown cow on the grass";
    auto nps = extract_noun_phrases(s);
    REQUIRE(nps.size() == 2);
    CHECK(heads(nps) == std::vector<std::string>{"cow", "grass"});
    CHECK(text_of(s, nps[0]) == "a brown cow");
    CHECK(text_of(s, nps[1]) == "the grass");

    CHECK(extract_noun_phrases("run quickly").empty());

    auto two = extract_noun_phrases("two cats");
    REQUIRE(two.size() == 1);
    CHECK(two[0].head == "cat");
  }

  TEST_CASE("chunk takes a trailing number") {
    const std::string s = "the bus 42 at the stop";
    auto nps = extract_noun_phrases(s);
    REQUIRE(nps.size() == 2);
    CHECK(text_of(s, nps[0]) == "the bus 42");
    CHECK(nps[0].head == "bus");
  }

  TEST_CASE("canonicalize examples") {
    CHECK(canonicalize("cats") == "cat");
    CHECK(canonicalize("grass") == "grass");
    CHECK(canonicalize("cow") == "cow");
    CHECK(canonicalize("bus") == "bus");
    CorpusWords corpus{"blorf"};
    CHECK(canonicalize("blorfs") == "blorfs");
    CHECK(canonicalize("blorfs", Lexicon::builtin(), &corpus) == "blorf");
  }

  TEST_CASE("span_to_token_indices") {
    std::vector<std::string> corpus{"a cow ."};
    Vocabulary v = build_vocab(corpus, 1, 100);
    const std::string s = "a cow .";
    auto tok = tokenize(s, v, 16);
    auto nps = extract_noun_phrases(s);
    REQUIRE(nps.size() == 1);
    CHECK(span_to_token_indices(nps[0], tok) == std::vector<std::size_t>{1, 2});

    auto single = extract_noun_phrases("grass");
    auto tok1 = tokenize("grass", v, 16);
    CHECK(span_to_token_indices(single[0], tok1) == std::vector<std::size_t>{1});

    const std::string longer = "a cow and a cow and a tree";
    auto truncated = tokenize(longer, v, 6);
    auto all = extract_noun_phrases(longer);
    REQUIRE(all.size() == 3);
    CHECK(span_to_token_indices(all[2], truncated).empty());
  }

  TEST_CASE("build_concept_vocab examples") {
    std::vector<std::string> corpus{"a cow", "a cow and a tree"};
    ConceptVocabulary c = build_concept_vocab(corpus, 1);
    CHECK(c.names() == std::vector<std::string>{"cow", "tree"});
    CHECK(c.label("cow") == 0);
    CHECK(c.label("tree") == 1);
    CHECK(c.label("dog") == ConceptVocabulary::kNone);

    CHECK(build_concept_vocab(corpus, 2).names() == std::vector<std::string>{"cow"});

    std::vector<std::string> skewed{"a zebra", "a zebra", "a zebra", "an apple"};
    CHECK(build_concept_vocab(skewed, 1).names() == std::vector<std::string>{"apple", "zebra"});

    std::vector<std::string> none{"run quickly"};
    CHECK_THROWS_AS(build_concept_vocab(none, 1), ConfigError);
  }

  TEST_CASE("concept vocabulary save and load") {
    const auto dir = test::temp_dir("concepts");
    ConceptVocabulary c({"tree", "cow", "cow"});
    CHECK(c.size() == 2);
    c.save(dir / "concepts.txt");
    CHECK(ConceptVocabulary::load(dir / "concepts.txt") == c);
  }

  TEST_CASE("annotated fixture, spans and heads") {
    const auto fixture =
        nlohmann::json::parse(read_text_file(test::data_path("fixtures/noun_phrases.json")));
    REQUIRE(fixture.size() == 20);
    for (const auto& item : fixture) {
      const auto sentence = item["sentence"].get<std::string>();
      INFO(sentence);
      const auto nps = extract_noun_phrases(sentence);
      REQUIRE(nps.size() == item["noun_phrases"].size());
      for (std::size_t i = 0; i < nps.size(); ++i) {
        const auto& want = item["noun_phrases"][i];
        CHECK(nps[i].span.begin == want["span"][0].get<std::size_t>());
        CHECK(nps[i].span.end == want["span"][1].get<std::size_t>());
        CHECK(nps[i].head == want["head"].get<std::string>());
      }
    }
  }

  TEST_CASE("chunks are ordered, disjoint, and headed by nouns") {
    const auto fixture =
        nlohmann::json::parse(read_text_file(test::data_path("fixtures/noun_phrases.json")));
    for (const auto& item : fixture) {
      const auto sentence = item["sentence"].get<std::string>();
      const auto words = split_words(sentence);
      std::vector<std::string> texts;
      for (const auto& w : words) texts.push_back(w.text);
      const auto tags = pos_tag(texts);
      const auto nps = chunk_nps(words, tags);
      CHECK(nps == extract_noun_phrases(sentence));
      for (std::size_t i = 0; i < nps.size(); ++i) {
        if (i > 0) CHECK(nps[i - 1].span.end <= nps[i].span.begin);
        // The head word is the last noun of the match.
        std::size_t last_noun = nps[i].first_word;
        for (std::size_t k = nps[i].first_word; k < nps[i].last_word; ++k)
          if (tags[k] == PosTag::kNoun) last_noun = k;
        CHECK(tags[last_noun] == PosTag::kNoun);
        CHECK(canonicalize(words[last_noun].text) == nps[i].head);
      }
    }
  }

  TEST_CASE("canonicalize is idempotent over lexicon and fixture words") {
    std::vector<std::string> words;
    for (const auto& item :
         nlohmann::json::parse(read_text_file(test::data_path("fixtures/noun_phrases.json")))) {
      for (auto& w : split_words(item["sentence"].get<std::string>())) words.push_back(w.text);
    }
    for (const char* extra : {"glass", "glasses", "buses", "boss", "bosses", "sss", "ss", "s"}) {
      words.push_back(extra);
    }
    const auto corpus = corpus_words(words);
    for (const auto& w : words) {
      const auto once = canonicalize(w, Lexicon::builtin(), &corpus);
      CHECK(canonicalize(once, Lexicon::builtin(), &corpus) == once);
    }
  }
}
