#pragma once

#include <stdexcept>
#include <string>

namespace srnn {

// Process exit codes, stable for CI scripting.
enum class ErrorCode : int {
  kConfig = 2,   // bad flags, malformed config, schema violations
  kData = 3,     // unreadable/corrupt files, shape or site mismatches
  kNumeric = 4,  // non-finite values, range violations, failed validation
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}

  ErrorCode code() const { return code_; }
  int exit_code() const { return static_cast<int>(code_); }

 private:
  ErrorCode code_;
};

inline Error config_error(const std::string& msg) {
  return Error(ErrorCode::kConfig, msg);
}
inline Error data_error(const std::string& msg) {
  return Error(ErrorCode::kData, msg);
}
inline Error numeric_error(const std::string& msg) {
  return Error(ErrorCode::kNumeric, msg);
}

}  // namespace srnn
