#pragma once

#include <stdexcept>
#include <string>

namespace gslight {

/// Error categories. The CLI maps these onto its exit codes.
enum class ErrorKind {
  format,      // malformed file / missing field
  data,        // non-finite or out-of-range value
  validation,  // violates a type invariant
  domain,      // argument outside an operation's domain
  shape,       // dimension mismatch
  degenerate,  // geometry undefined (coincident centres, epipole, ...)
  parse,       // text did not match the answer template
  vocabulary,  // template matched but a word is outside the vocabulary
  adapter,     // external process failed or broke its contract
  numeric,     // numerical failure (non-PD covariance, NaN gradients)
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::format: return "format";
    case ErrorKind::data: return "data";
    case ErrorKind::validation: return "validation";
    case ErrorKind::domain: return "domain";
    case ErrorKind::shape: return "shape";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::parse: return "parse";
    case ErrorKind::vocabulary: return "vocabulary";
    case ErrorKind::adapter: return "adapter";
    case ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace gslight
