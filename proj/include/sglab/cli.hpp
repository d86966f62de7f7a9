#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sglab {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point behind the `sglab` executable. args[0] is the program name.
/// Returns 0 on success, 1 on usage errors, 2 on runtime errors.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sglab
