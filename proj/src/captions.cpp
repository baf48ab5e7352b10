#include "dalign/captions.hpp"

#include <cctype>
#include <sstream>

#include <nlohmann/json.hpp>

#include "dalign/binary_io.hpp"
#include "dalign/concepts.hpp"
#include "dalign/error.hpp"
#include "dalign/feature_store.hpp"
#include "dalign/rng.hpp"

namespace dalign {

namespace {

using nlohmann::json;

constexpr std::string_view kEmptyCaption = "a photo.";
constexpr std::string_view kJoiner = " and ";

bool blank(const std::string& s) {
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  return true;
}

std::string string_field(const json& obj, const char* key, std::size_t line, bool required) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) {
    if (required) {
      throw FormatError("captions line " + std::to_string(line) + ": missing \"" + key + "\"");
    }
    return {};
  }
  if (!it->is_string()) {
    throw FormatError("captions line " + std::to_string(line) + ": \"" + key +
                      "\" must be a string");
  }
  return it->get<std::string>();
}

std::vector<std::string> split_mentions(std::string_view fill) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto at = fill.find(kJoiner, start);
    out.emplace_back(fill.substr(start, at == std::string_view::npos ? fill.npos : at - start));
    if (at == std::string_view::npos) break;
    start = at + kJoiner.size();
  }
  return out;
}

std::string join_mentions(const std::vector<std::string>& parts) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) s += kJoiner;
    s += parts[i];
  }
  return s;
}

bool has_word(std::string_view text) {
  for (char c : text)
    if (std::isalnum(static_cast<unsigned char>(c))) return true;
  return false;
}

std::string degrade_one(const CaptionRecord& rec, double p, Rng& rng) {
  const auto hole = rec.prompt.find("{}");
  if (hole != std::string::npos) {
    const std::string_view prefix(rec.prompt.data(), hole);
    const std::string_view suffix = std::string_view(rec.prompt).substr(hole + 2);
    const std::string_view cap = rec.caption;
    if (cap.size() >= prefix.size() + suffix.size() && cap.starts_with(prefix) &&
        cap.ends_with(suffix)) {
      const auto fill = cap.substr(prefix.size(), cap.size() - prefix.size() - suffix.size());
      std::vector<std::string> kept;
      bool dropped = false;
      for (auto& m : split_mentions(fill)) {
        if (rng.uniform() < p) {
          dropped = true;
        } else {
          kept.push_back(std::move(m));
        }
      }
      if (!dropped) return rec.caption;
      if (kept.empty()) return std::string(kEmptyCaption);
      return std::string(prefix) + join_mentions(kept) + std::string(suffix);
    }
  }

  const auto nps = extract_noun_phrases(rec.caption);
  std::vector<bool> drop(nps.size());
  bool any = false;
  for (std::size_t i = 0; i < nps.size(); ++i) {
    drop[i] = rng.uniform() < p;
    any = any || drop[i];
  }
  if (!any) return rec.caption;
  std::string out;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < nps.size(); ++i) {
    if (!drop[i]) continue;
    out.append(rec.caption, cursor, nps[i].span.begin - cursor);
    cursor = nps[i].span.end;
  }
  out.append(rec.caption, cursor);
  std::string squeezed;
  for (char c : out) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (space && (squeezed.empty() || squeezed.back() == ' ')) continue;
    squeezed.push_back(space ? ' ' : c);
  }
  while (!squeezed.empty() && squeezed.back() == ' ') squeezed.pop_back();
  bool survivor = false;
  for (std::size_t i = 0; i < nps.size(); ++i) survivor = survivor || !drop[i];
  if (!survivor || !has_word(squeezed)) return std::string(kEmptyCaption);
  return squeezed;
}

}  // namespace

std::vector<CaptionRecord> parse_captions(const std::string& text) {
  std::vector<CaptionRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (blank(line)) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("captions line " + std::to_string(line_no) + ": malformed JSON (" +
                        e.what() + ")");
    }
    if (!obj.is_object()) {
      throw FormatError("captions line " + std::to_string(line_no) + ": expected an object");
    }
    CaptionRecord rec;
    rec.image_id = string_field(obj, "image_id", line_no, true);
    rec.caption = string_field(obj, "caption", line_no, true);
    rec.prompt = string_field(obj, "prompt", line_no, false);
    rec.source = string_field(obj, "source", line_no, false);
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<CaptionRecord> read_captions(const std::filesystem::path& path) {
  try {
    return parse_captions(read_text_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_captions(std::span<const CaptionRecord> records) {
  std::string out;
  for (const auto& r : records) {
    json obj;
    obj["image_id"] = r.image_id;
    obj["caption"] = r.caption;
    obj["prompt"] = r.prompt;
    if (!r.source.empty()) obj["source"] = r.source;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

void write_captions(std::span<const CaptionRecord> records, const std::filesystem::path& path) {
  write_text_file(path, format_captions(records));
}

void check_captions_resolve(std::span<const CaptionRecord> records, const FeatureStore& store) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!store.find(records[i].image_id)) {
      throw InputError("caption " + std::to_string(i + 1) + ": image_id '" +
                       records[i].image_id + "' is not in the feature store");
    }
  }
}

std::vector<CaptionRecord> degrade_captions(std::span<const CaptionRecord> records,
                                            double drop_prob, std::uint64_t seed) {
  if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) {
    throw ParameterError("degrade_captions: drop_prob must lie in [0, 1]");
  }
  std::vector<CaptionRecord> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    CaptionRecord rec = records[i];
    rec.caption = degrade_one(records[i], drop_prob, rng);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace dalign
