#pragma once

#include <stdexcept>
#include <string>

namespace myo {

enum class ErrorKind {
  Shape,
  Domain,
  Io,
  ParseMagic,
  ParseVersion,
  ParseTruncated,
  Parse,
  Fit,
  Numeric,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace myo
