#include "dalign/class_set.hpp"

#include <sstream>

#include <nlohmann/json.hpp>

#include "dalign/binary_io.hpp"
#include "dalign/embedded.hpp"
#include "dalign/error.hpp"

namespace dalign {

using nlohmann::json;

void ClassSet::validate() const {
  if (classes.empty()) throw ConfigError("class set: no classes");
  if (classes.size() > 254) throw ConfigError("class set: at most 254 classes fit an 8-bit mask");
  if (templates.empty()) throw ConfigError("class set: no templates");
  for (const auto& t : templates) {
    if (t.find("{}") == std::string::npos) {
      throw ConfigError("class set: template \"" + t + "\" has no {} placeholder");
    }
  }
}

std::vector<std::string> default_templates() {
  const auto& res = embedded::resources();
  std::vector<std::string> out;
  std::istringstream in{std::string(res.at("templates/imagenet"))};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::string format_class_set(const ClassSet& set) {
  json j;
  j["classes"] = set.classes;
  j["templates"] = set.templates;
  if (set.background_threshold) j["background_threshold"] = *set.background_threshold;
  return j.dump(2) + "\n";
}

ClassSet parse_class_set(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("class set: malformed JSON (") + e.what() + ")");
  }
  ClassSet set;
  try {
    set.classes = j.at("classes").get<std::vector<std::string>>();
    if (j.contains("templates")) {
      set.templates = j.at("templates").get<std::vector<std::string>>();
    } else {
      set.templates = default_templates();
    }
    if (j.contains("background_threshold") && !j["background_threshold"].is_null()) {
      set.background_threshold = j["background_threshold"].get<double>();
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("class set: ") + e.what());
  }
  set.validate();
  return set;
}

ClassSet read_class_set(const std::filesystem::path& path) {
  return parse_class_set(read_text_file(path));
}

void write_class_set(const ClassSet& set, const std::filesystem::path& path) {
  write_text_file(path, format_class_set(set));
}

}  // namespace dalign
