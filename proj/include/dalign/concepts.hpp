#pragma once

// Rule-based part-of-speech tagging and noun-phrase chunking. Noun phrases
// become concepts: their canonical head noun is the concept identity and
// their character span selects the token positions pooled by the encoder.

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "dalign/vocab.hpp"

namespace dalign {

enum class PosTag { kDet, kAdj, kNoun, kVerb, kAdp, kPron, kConj, kPunct, kNum, kAdv, kOther };

std::string_view to_string(PosTag tag);

// Word lists, one word per line, named after their files in data/lexicon.
class Lexicon {
 public:
  // The lists compiled into the library.
  static const Lexicon& builtin();
  // Reads <dir>/<list>.txt for every list; missing files are empty lists.
  static Lexicon load(const std::filesystem::path& dir);

  bool in(std::string_view list, std::string_view word) const;
  bool is_noun(std::string_view word) const { return in("nouns", word); }

  static const std::vector<std::string>& list_names();

 private:
  std::map<std::string, std::unordered_set<std::string>, std::less<>> lists_;
};

std::vector<PosTag> pos_tag(std::span<const std::string> words,
                            const Lexicon& lexicon = Lexicon::builtin());

struct NounPhrase {
  CharSpan span;           // covers the whole match
  std::string head;        // canonical head noun
  std::size_t first_word;  // word range [first_word, last_word)
  std::size_t last_word;

  bool operator==(const NounPhrase&) const = default;
};

// Words seen in a caption corpus; lets canonicalize accept plurals of nouns
// missing from the lexicon.
using CorpusWords = std::unordered_set<std::string>;

// Strips one trailing "s" when the word is longer than three characters,
// does not end in "ss", and the stem is a lexicon noun or a corpus word.
std::string canonicalize(std::string_view head, const Lexicon& lexicon = Lexicon::builtin(),
                         const CorpusWords* corpus = nullptr);

// Maximal left-to-right matches of DET? ADJ* NOUN+ NUM?; the head is the
// last NOUN of the match.
std::vector<NounPhrase> chunk_nps(std::span<const Word> words, std::span<const PosTag> tags,
                                  const Lexicon& lexicon = Lexicon::builtin(),
                                  const CorpusWords* corpus = nullptr);

// split_words + pos_tag + chunk_nps.
std::vector<NounPhrase> extract_noun_phrases(std::string_view caption,
                                             const Lexicon& lexicon = Lexicon::builtin(),
                                             const CorpusWords* corpus = nullptr);

// Token positions whose span intersects the phrase. Empty when truncation
// removed the phrase.
std::vector<std::size_t> span_to_token_indices(const NounPhrase& np, const TokenizedCaption& tok);

class ConceptVocabulary {
 public:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  ConceptVocabulary() = default;
  // Sorts and deduplicates.
  explicit ConceptVocabulary(std::vector<std::string> concepts);

  std::size_t size() const { return concepts_.size(); }
  bool empty() const { return concepts_.empty(); }
  std::size_t label(std::string_view concept_name) const;  // kNone when absent
  const std::string& name(std::size_t label) const { return concepts_.at(label); }
  const std::vector<std::string>& names() const { return concepts_; }

  void save(const std::filesystem::path& path) const;
  static ConceptVocabulary load(const std::filesystem::path& path);

  bool operator==(const ConceptVocabulary& o) const { return concepts_ == o.concepts_; }

 private:
  std::vector<std::string> concepts_;
  std::map<std::string, std::size_t, std::less<>> labels_;
};

CorpusWords corpus_words(std::span<const std::string> captions);

// Canonical heads occurring at least min_freq times, alphabetical.
// Throws ConfigError when nothing survives.
ConceptVocabulary build_concept_vocab(std::span<const std::string> captions, std::size_t min_freq,
                                      const Lexicon& lexicon = Lexicon::builtin());

}  // namespace dalign
