#include "dalign/concepts.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "dalign/embedded.hpp"
#include "dalign/error.hpp"

namespace dalign {

namespace {

void add_words(std::unordered_set<std::string>& set, std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (!line.empty()) set.insert(line);
  }
}

bool all_of_chars(std::string_view w, int (*pred)(int)) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [pred](char c) {
    return pred(static_cast<unsigned char>(c)) != 0;
  });
}

bool ends_with(std::string_view w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.substr(w.size() - suffix.size()) == suffix;
}

// Provisional tags that the contextual pass rewrites.
enum class Pending { kNone, kNounOrAdj, kSuffixVerb };

}  // namespace

std::string_view to_string(PosTag tag) {
  switch (tag) {
    case PosTag::kDet: return "DET";
    case PosTag::kAdj: return "ADJ";
    case PosTag::kNoun: return "NOUN";
    case PosTag::kVerb: return "VERB";
    case PosTag::kAdp: return "ADP";
    case PosTag::kPron: return "PRON";
    case PosTag::kConj: return "CONJ";
    case PosTag::kPunct: return "PUNCT";
    case PosTag::kNum: return "NUM";
    case PosTag::kAdv: return "ADV";
    case PosTag::kOther: return "OTHER";
  }
  return "OTHER";
}

const std::vector<std::string>& Lexicon::list_names() {
  static const std::vector<std::string> names{"determiners", "prepositions", "pronouns",
                                              "conjunctions", "auxiliaries", "adverbs",
                                              "adjectives",  "nouns",        "verbs"};
  return names;
}

const Lexicon& Lexicon::builtin() {
  static const Lexicon lex = [] {
    Lexicon l;
    const auto& res = embedded::resources();
    for (const auto& name : list_names()) {
      auto it = res.find("lexicon/" + name);
      if (it == res.end()) throw ConfigError("missing built-in lexicon " + name);
      add_words(l.lists_[name], it->second);
    }
    return l;
  }();
  return lex;
}

Lexicon Lexicon::load(const std::filesystem::path& dir) {
  Lexicon l;
  for (const auto& name : list_names()) {
    auto& set = l.lists_[name];
    std::ifstream in(dir / (name + ".txt"), std::ios::binary);
    if (!in) continue;
    std::ostringstream buf;
    buf << in.rdbuf();
    add_words(set, buf.str());
  }
  return l;
}

bool Lexicon::in(std::string_view list, std::string_view word) const {
  auto it = lists_.find(list);
  return it != lists_.end() && it->second.contains(std::string(word));
}

std::vector<PosTag> pos_tag(std::span<const std::string> words, const Lexicon& lex) {
  std::vector<PosTag> tags(words.size(), PosTag::kNoun);
  std::vector<Pending> pending(words.size(), Pending::kNone);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const std::string& w = words[i];
    PosTag& t = tags[i];
    if (w.empty()) {
      t = PosTag::kOther;
    } else if (all_of_chars(w, std::ispunct)) {
      t = PosTag::kPunct;
    } else if (all_of_chars(w, std::isdigit)) {
      t = PosTag::kNum;
    } else if (lex.in("determiners", w)) {
      t = PosTag::kDet;
    } else if (lex.in("prepositions", w)) {
      t = PosTag::kAdp;
    } else if (lex.in("pronouns", w)) {
      t = PosTag::kPron;
    } else if (lex.in("conjunctions", w)) {
      t = PosTag::kConj;
    } else if (lex.in("auxiliaries", w)) {
      t = PosTag::kVerb;
    } else if (lex.in("adverbs", w)) {
      t = PosTag::kAdv;
    } else if (lex.in("nouns", w) && lex.in("adjectives", w)) {
      t = PosTag::kNoun;
      pending[i] = Pending::kNounOrAdj;
    } else if (lex.in("nouns", w)) {
      t = PosTag::kNoun;
    } else if (lex.in("adjectives", w)) {
      t = PosTag::kAdj;
    } else if (lex.in("verbs", w)) {
      t = PosTag::kVerb;
    } else if (w.size() > 3 && ends_with(w, "ly")) {
      t = PosTag::kAdv;
    } else if ((w.size() > 4 && ends_with(w, "ing")) || (w.size() > 3 && ends_with(w, "ed"))) {
      t = PosTag::kVerb;
      pending[i] = Pending::kSuffixVerb;
    } else if (!std::isalpha(static_cast<unsigned char>(w[0])) &&
               !std::isdigit(static_cast<unsigned char>(w[0]))) {
      t = PosTag::kOther;
    }
  }

  // Right to left so that a word sees its already-resolved successor.
  for (std::size_t k = words.size(); k-- > 0;) {
    const bool next_nominal =
        k + 1 < words.size() && (tags[k + 1] == PosTag::kNoun || tags[k + 1] == PosTag::kAdj);
    if (pending[k] == Pending::kNounOrAdj && next_nominal) {
      tags[k] = PosTag::kAdj;
    } else if (pending[k] == Pending::kSuffixVerb && k > 0 && next_nominal &&
               (tags[k - 1] == PosTag::kDet || tags[k - 1] == PosTag::kAdj)) {
      // "a sleeping cat", "the parked car"
      tags[k] = PosTag::kAdj;
    }
  }
  return tags;
}

std::string canonicalize(std::string_view head, const Lexicon& lex, const CorpusWords* corpus) {
  std::string h(head);
  if (h.size() > 3 && ends_with(h, "s") && !ends_with(h, "ss")) {
    std::string stem = h.substr(0, h.size() - 1);
    if (lex.is_noun(stem) || (corpus && corpus->contains(stem))) return stem;
  }
  return h;
}

std::vector<NounPhrase> chunk_nps(std::span<const Word> words, std::span<const PosTag> tags,
                                  const Lexicon& lex, const CorpusWords* corpus) {
  if (words.size() != tags.size()) throw ShapeError("chunk_nps: words and tags differ in length");
  std::vector<NounPhrase> out;
  std::size_t i = 0;
  while (i < words.size()) {
    std::size_t j = i;
    if (tags[j] == PosTag::kDet) ++j;
    while (j < words.size() && tags[j] == PosTag::kAdj) ++j;
    const auto noun_begin = j;
    while (j < words.size() && tags[j] == PosTag::kNoun) ++j;
    if (j == noun_begin) {
      ++i;
      continue;
    }
    const auto head_word = j - 1;
    if (j < words.size() && tags[j] == PosTag::kNum) ++j;
    out.push_back({CharSpan{words[i].span.begin, words[j - 1].span.end},
                   canonicalize(words[head_word].text, lex, corpus), i, j});
    i = j;
  }
  return out;
}

std::vector<NounPhrase> extract_noun_phrases(std::string_view caption, const Lexicon& lex,
                                             const CorpusWords* corpus) {
  const auto words = split_words(caption);
  std::vector<std::string> texts;
  texts.reserve(words.size());
  for (const auto& w : words) texts.push_back(w.text);
  const auto tags = pos_tag(texts, lex);
  return chunk_nps(words, tags, lex, corpus);
}

std::vector<std::size_t> span_to_token_indices(const NounPhrase& np, const TokenizedCaption& tok) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tok.spans.size(); ++i) {
    if (tok.spans[i].intersects(np.span)) out.push_back(i + 1);
  }
  return out;
}

ConceptVocabulary::ConceptVocabulary(std::vector<std::string> concepts) {
  std::sort(concepts.begin(), concepts.end());
  concepts.erase(std::unique(concepts.begin(), concepts.end()), concepts.end());
  concepts_ = std::move(concepts);
  for (std::size_t i = 0; i < concepts_.size(); ++i) labels_.emplace(concepts_[i], i);
}

std::size_t ConceptVocabulary::label(std::string_view concept_name) const {
  auto it = labels_.find(concept_name);
  return it == labels_.end() ? kNone : it->second;
}

void ConceptVocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write concept vocabulary: " + path.string());
  for (const auto& c : concepts_) out << c << '\n';
}

ConceptVocabulary ConceptVocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read concept vocabulary: " + path.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) names.push_back(line);
  }
  return ConceptVocabulary(std::move(names));
}

CorpusWords corpus_words(std::span<const std::string> captions) {
  CorpusWords words;
  for (const auto& c : captions)
    for (auto& w : split_words(c)) words.insert(std::move(w.text));
  return words;
}

ConceptVocabulary build_concept_vocab(std::span<const std::string> captions, std::size_t min_freq,
                                      const Lexicon& lex) {
  const auto corpus = corpus_words(captions);
  std::map<std::string, std::size_t> counts;
  for (const auto& c : captions)
    for (const auto& np : extract_noun_phrases(c, lex, &corpus)) ++counts[np.head];
  std::vector<std::string> kept;
  for (const auto& [name, n] : counts)
    if (n >= min_freq) kept.push_back(name);
  if (kept.empty()) {
    throw ConfigError("build_concept_vocab: no concept reaches min_freq " +
                      std::to_string(min_freq));
  }
  return ConceptVocabulary(std::move(kept));
}

}  // namespace dalign
