#pragma once

// Command-line front end. Exit codes: 0 success, 2 usage or input error,
// 3 numerical failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace dalign::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

// `args` excludes the program name. Machine-readable JSON goes to `out`,
// logs and diagnostics to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string version();

}  // namespace dalign::cli
