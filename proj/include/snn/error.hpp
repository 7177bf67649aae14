#pragma once

#include <stdexcept>
#include <string>

namespace snn {

// Validation errors map to CLI exit code 1, I/O errors to exit code 2.
enum class ErrorKind { validation, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error validation_error(const std::string& what) {
  return Error(ErrorKind::validation, what);
}

inline Error io_error(const std::string& what) {
  return Error(ErrorKind::io, what);
}

}  // namespace snn
