#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tfti2i::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 1;
inline constexpr int kExitRuntimeError = 2;

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Diagnostics go to `err`, progress lines to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tfti2i::cli
