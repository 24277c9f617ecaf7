#pragma once

#include <string>
#include <vector>

namespace vreid::cli {

// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

int run(int argc, const char* const* argv);

/// Same as run() with argv[0] omitted.
int run(const std::vector<std::string>& args);

}  // namespace vreid::cli
