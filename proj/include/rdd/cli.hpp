#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace rdd::cli {

// Exit codes: 0 success, 2 usage or input validation failure, 3 analysis
// failure (estimation, selection or test could not be carried out).
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitAnalysis = 3;

// `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace rdd::cli
