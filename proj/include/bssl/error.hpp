#pragma once

#include <stdexcept>
#include <string>

namespace bssl {

enum class ErrorKind {
  Shape,        // matrix / batch dimensions disagree
  Input,        // malformed or out-of-range values
  State,        // operation called in the wrong state
  Divergence,   // a loss or gradient became non-finite / exploded
  Config,       // invalid configuration
  Argument,     // invalid scalar argument
  SizeGuard,    // problem too large for an exhaustive routine
  Unsupported,  // operation undefined for this kind of data
  Eval,         // evaluation impossible (e.g. empty test set)
  Version,      // incompatible file version
  Io,           // file system / format problems
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

}  // namespace bssl
