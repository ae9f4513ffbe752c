#pragma once

#include <stdexcept>
#include <string>

namespace prunekit {

enum class errc {
  bad_magic,
  unsupported_version,
  invalid_header,
  length_mismatch,
  truncated_payload,
  non_finite_value,
  io_error,
  invalid_argument,
  shape_mismatch,
  unknown_layer,
  empty_policy_match,
  no_convergence,
  invalid_state,
};

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& message) : std::runtime_error(message), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void raise(errc code, const std::string& message) { throw Error(code, message); }

}  // namespace prunekit
