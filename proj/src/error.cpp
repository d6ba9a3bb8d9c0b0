#include "bssl/error.hpp"

namespace bssl {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Input: return "input error";
    case ErrorKind::State: return "state error";
    case ErrorKind::Divergence: return "training divergence";
    case ErrorKind::Config: return "configuration error";
    case ErrorKind::Argument: return "argument error";
    case ErrorKind::SizeGuard: return "size guard";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::Eval: return "evaluation error";
    case ErrorKind::Version: return "version mismatch";
    case ErrorKind::Io: return "i/o error";
  }
  return "error";
}

}  // namespace bssl
