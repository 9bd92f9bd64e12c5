#include "gazedepth/error.hpp"

namespace gazedepth {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Domain: return "domain";
    case ErrorCode::BadConfig: return "bad_config";
    case ErrorCode::StreamOrder: return "stream_order";
    case ErrorCode::InsufficientData: return "insufficient_data";
    case ErrorCode::DegenerateFit: return "degenerate_fit";
    case ErrorCode::TimeoutNoSettle: return "timeout_no_settle";
    case ErrorCode::BadDepths: return "bad_depths";
    case ErrorCode::Io: return "io";
    case ErrorCode::Parse: return "parse";
  }
  return "unknown";
}

}  // namespace gazedepth
