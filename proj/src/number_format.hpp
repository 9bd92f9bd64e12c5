#pragma once

#include <string>

#include <fmt/format.h>

namespace gazedepth::detail {

// 17 significant digits round-trips every finite double exactly.
inline std::string format_double(double v) { return fmt::format("{:.17g}", v); }

}  // namespace gazedepth::detail
