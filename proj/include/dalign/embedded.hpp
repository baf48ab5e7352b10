#pragma once

#include <map>
#include <string>
#include <string_view>

namespace dalign::embedded {

// Text files from data/ compiled into the library, keyed by their path
// relative to data/ without extension (e.g. "lexicon/nouns").
const std::map<std::string, std::string_view>& resources();

}  // namespace dalign::embedded
