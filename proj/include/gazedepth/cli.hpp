#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gazedepth {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Entry point of the `gazedepth` tool. `args` excludes the program name.
/// Returns 0 on success, 1 on a usage error, 2 on an IO or parse error.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, char** argv);

}  // namespace gazedepth
