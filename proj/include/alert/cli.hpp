#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace alert::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Entry point of the `alert` tool. Data goes to `out` (or files), logs to `err`.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
        std::ostream& err = std::cerr);

}  // namespace alert::cli
