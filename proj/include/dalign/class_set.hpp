#pragma once

// Evaluation class set: {"classes": [...], "templates": ["... {} ..."],
// "background_threshold"?: number}. Class i is mask label i.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dalign {

struct ClassSet {
  std::vector<std::string> classes;
  std::vector<std::string> templates;
  std::optional<double> background_threshold;

  // Non-empty classes, at most 254, every template containing "{}".
  void validate() const;
  bool operator==(const ClassSet&) const = default;
};

// The shipped seven ImageNet prompt templates.
std::vector<std::string> default_templates();

std::string format_class_set(const ClassSet& set);
ClassSet parse_class_set(const std::string& text);
ClassSet read_class_set(const std::filesystem::path& path);
void write_class_set(const ClassSet& set, const std::filesystem::path& path);

}  // namespace dalign
