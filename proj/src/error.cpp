#include "myoloop/error.hpp"

namespace myo {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Io: return "io error";
    case ErrorKind::ParseMagic: return "bad magic";
    case ErrorKind::ParseVersion: return "unsupported version";
    case ErrorKind::ParseTruncated: return "truncated file";
    case ErrorKind::Parse: return "parse error";
    case ErrorKind::Fit: return "fit error";
    case ErrorKind::Numeric: return "numeric error";
  }
  return "error";
}

}  // namespace myo
