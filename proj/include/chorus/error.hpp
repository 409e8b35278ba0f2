#pragma once

#include <stdexcept>
#include <string>

namespace chorus {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  Io,
  Parse,
  Divergence,
  NotFound,
  Conflict,
  State,
  Usage,  // missing or malformed settings
};

/// Exception type used throughout the core. The C API translates `kind`
/// into a status code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::InvalidArgument, what);
}

}  // namespace chorus
