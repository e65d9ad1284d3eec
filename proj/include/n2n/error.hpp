#pragma once

#include <stdexcept>
#include <string>

namespace n2n {

enum class ErrorKind {
  InvalidInput,
  Io,
  CorruptFile,
  UnsupportedVersion,
  ApproximationFailed,
  NumericalFailure,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::Io: return "Io";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::ApproximationFailed: return "ApproximationFailed";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::InvalidInput, what);
}

}  // namespace n2n
