#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace fairshare {

// Failure with a stable machine-readable code ("overloaded base",
// "no critical link", "nnls not converged", ...). The codes are part of the
// library contract; messages carry context only.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(code + ": " + message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace fairshare
