#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace babywalk {

enum class ErrorCode {
  invalid_argument,
  invalid_action,
  invalid_state,
  unreachable,
  sampling_exhausted,
  join_violation,
  schema_violation,
  no_landmark,
  degenerate_data,
  infeasible,
  empty_data,
  io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::invalid_action: return "invalid_action";
    case ErrorCode::invalid_state: return "invalid_state";
    case ErrorCode::unreachable: return "unreachable";
    case ErrorCode::sampling_exhausted: return "sampling_exhausted";
    case ErrorCode::join_violation: return "join_violation";
    case ErrorCode::schema_violation: return "schema_violation";
    case ErrorCode::no_landmark: return "no_landmark";
    case ErrorCode::degenerate_data: return "degenerate_data";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::empty_data: return "empty_data";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace babywalk
