#pragma once

#include <stdexcept>
#include <string>

namespace tfti2i {

enum class Errc {
  ShapeMismatch,
  RowFullyMasked,
  DegenerateHistogram,
  InvalidMask,
  InvalidConfig,
  BadImageShape,
  Io,
};

const char* to_string(Errc code) noexcept;

/// Single exception type for the library; `code()` tells callers which
/// contract was violated.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace tfti2i
