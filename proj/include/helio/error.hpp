#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace helio {

enum class ErrorKind {
  MissingFile,
  MalformedFits,
  MissingHeaderKey,
  NonFiniteResult,
  UnsortedInput,
  EmptySplit,
  InvalidSize,
  InvalidSpec,
  ShapeMismatch,
  DomainError,
  EmptyTrainSet,
  DivergenceDetected,
  IoFailure,
  DigestMismatch,
  ArchitectureMismatch,
  ZeroDenominator,
  ConstantImage,
  ImageTooSmall,
  ConfigError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace helio
