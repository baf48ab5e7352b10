#include "dalign/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "dalign/error.hpp"

namespace dalign {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{"<bos>", "<eos>", "<pad>", "<unk>"};
  return specials;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<Word> split_words(std::string_view text) {
  std::vector<Word> words;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (is_punct(c)) {
      words.push_back({std::string(1, c), {i, i + 1}});
      ++i;
      continue;
    }
    const auto start = i;
    std::string w;
    while (i < text.size() && !is_space(text[i]) && !is_punct(text[i])) {
      w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[i]))));
      ++i;
    }
    words.push_back({std::move(w), {start, i}});
  }
  return words;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  tokens_ = special_tokens();
  tokens_.insert(tokens_.end(), std::make_move_iterator(tokens.begin()),
                 std::make_move_iterator(tokens.end()));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw InputError("vocabulary: duplicate token '" + tokens_[i] + "'");
    }
  }
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.contains(std::string(token));
}

std::span<const std::string> Vocabulary::regular_tokens() const {
  return std::span<const std::string>(tokens_).subspan(kSpecialCount);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary: " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
  if (!out) throw IoError("failed writing vocabulary: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  const auto& specials = special_tokens();
  if (lines.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), lines.begin())) {
    throw FormatError("vocabulary file does not start with the special tokens: " +
                      path.string());
  }
  lines.erase(lines.begin(), lines.begin() + static_cast<std::ptrdiff_t>(specials.size()));
  return Vocabulary(std::move(lines));
}

Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_freq,
                       std::size_t max_size) {
  if (corpus.empty()) throw InputError("build_vocab: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& caption : corpus)
    for (auto& w : split_words(caption)) ++counts[w.text];

  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    const auto& sp = special_tokens();
    if (n >= min_freq && std::find(sp.begin(), sp.end(), tok) == sp.end()) ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const auto cap = max_size > Vocabulary::kSpecialCount ? max_size - Vocabulary::kSpecialCount : 0;
  if (ranked.size() > cap) ranked.resize(cap);
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocabulary(std::move(tokens));
}

TokenizedCaption tokenize(std::string_view caption, const Vocabulary& vocab,
                          std::size_t max_len) {
  if (max_len < 2) throw ParameterError("tokenize: max_len must be at least 2");
  const auto words = split_words(caption);
  const auto keep = std::min(words.size(), max_len - 2);
  TokenizedCaption out;
  out.ids.reserve(max_len);
  out.ids.push_back(Vocabulary::kBos);
  for (std::size_t i = 0; i < keep; ++i) {
    out.ids.push_back(vocab.id(words[i].text));
    out.spans.push_back(words[i].span);
  }
  out.ids.push_back(Vocabulary::kEos);
  out.length = out.ids.size();
  out.ids.resize(max_len, Vocabulary::kPad);
  return out;
}

}  // namespace dalign
