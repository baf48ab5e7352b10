#pragma once

// Caption store: UTF-8 JSONL, one {image_id, caption, prompt?, source?}
// object per line.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dalign {

class FeatureStore;

struct CaptionRecord {
  std::string image_id;
  std::string caption;
  std::string prompt;  // "" when absent
  std::string source;  // "raw" | "synthetic" | "synthetic-world"; "" when absent

  bool operator==(const CaptionRecord&) const = default;
};

// Blank lines are skipped and unknown keys ignored. Malformed lines raise
// FormatError with the 1-based line number.
std::vector<CaptionRecord> parse_captions(const std::string& text);
std::vector<CaptionRecord> read_captions(const std::filesystem::path& path);

std::string format_captions(std::span<const CaptionRecord> records);
void write_captions(std::span<const CaptionRecord> records, const std::filesystem::path& path);

// Throws InputError naming the first image_id missing from the store.
void check_captions_resolve(std::span<const CaptionRecord> records, const FeatureStore& store);

// Deletes each concept mention independently with probability drop_prob.
// Captions generated from a "{}" template (prompt) are refilled with the
// surviving mentions; other captions lose their noun-phrase spans. A caption
// left without mentions becomes "a photo.".
std::vector<CaptionRecord> degrade_captions(std::span<const CaptionRecord> records,
                                            double drop_prob, std::uint64_t seed);

}  // namespace dalign
