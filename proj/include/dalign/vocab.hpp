#pragma once

// Word-level vocabulary and tokenizer for the text encoder.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dalign {

using TokenId = std::int32_t;

struct CharSpan {
  std::size_t begin = 0;  // inclusive byte offset
  std::size_t end = 0;    // exclusive byte offset

  bool intersects(const CharSpan& o) const { return begin < o.end && o.begin < end; }
  bool operator==(const CharSpan&) const = default;
};

struct Word {
  std::string text;  // lowercased
  CharSpan span;     // into the original caption
};

// Lowercases ASCII, splits on whitespace and splits every ASCII punctuation
// character off as its own word.
std::vector<Word> split_words(std::string_view text);

class Vocabulary {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kPad = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kSpecialCount = 4;

  Vocabulary();
  // Specials are prepended; `tokens` must not contain duplicates.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  bool contains(std::string_view token) const;
  // Ids >= kSpecialCount, in id order.
  std::span<const std::string> regular_tokens() const;
  const std::vector<std::string>& all_tokens() const { return tokens_; }

  // One token per line; line number = id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Tokens with frequency >= min_freq, most frequent first, alphabetical among
// ties. max_size caps the total size including the four specials.
Vocabulary build_vocab(std::span<const std::string> corpus, std::size_t min_freq,
                       std::size_t max_size);

struct TokenizedCaption {
  std::vector<TokenId> ids;  // BOS, words..., EOS, then PAD up to max_len
  std::size_t length = 0;    // number of non-PAD ids
  // spans[i] is the character span of the word at position i + 1.
  std::vector<CharSpan> spans;

  std::size_t eos_position() const { return length - 1; }
};

// Truncates the word sequence so that EOS always fits within max_len.
TokenizedCaption tokenize(std::string_view caption, const Vocabulary& vocab,
                          std::size_t max_len);

}  // namespace dalign
