#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gazedepth {

enum class ErrorCode {
  Domain,
  BadConfig,
  StreamOrder,
  InsufficientData,
  DegenerateFit,
  TimeoutNoSettle,
  BadDepths,
  Io,
  Parse,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so that
/// callers (the CLI, the session service) can map it to an exit code or an
/// error frame without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gazedepth
