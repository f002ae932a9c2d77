#pragma once

#include <stdexcept>
#include <string>

namespace kdrank {

// Every failure the library reports carries one of these kinds so callers
// (and the CLI) can react without parsing messages.
enum class ErrorKind {
  kDimension,
  kContract,
  kPoisonedStep,
  kInputLength,
  kIncompatibleShapes,
  kCorruptHeader,
  kTruncated,
  kVersionMismatch,
  kIo,
  kParse,
  kUnsupportedMap,
  kLoss,
  kDivergence,
  kDegeneratePairs,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Parse failures keep the offending line (1-based, 0 when not line-bound).
class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line,
             const std::string& what)
      : Error(ErrorKind::kParse,
              path + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Raised when a training run produces a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : Error(ErrorKind::kDivergence,
              "diverged at step " + std::to_string(step) + ": " + what),
        step_(step) {}

  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace kdrank
