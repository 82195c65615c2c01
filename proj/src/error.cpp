#include "helio/error.hpp"

namespace helio {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::MalformedFits: return "MalformedFits";
    case ErrorKind::MissingHeaderKey: return "MissingHeaderKey";
    case ErrorKind::NonFiniteResult: return "NonFiniteResult";
    case ErrorKind::UnsortedInput: return "UnsortedInput";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::InvalidSize: return "InvalidSize";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::EmptyTrainSet: return "EmptyTrainSet";
    case ErrorKind::DivergenceDetected: return "DivergenceDetected";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::DigestMismatch: return "DigestMismatch";
    case ErrorKind::ArchitectureMismatch: return "ArchitectureMismatch";
    case ErrorKind::ZeroDenominator: return "ZeroDenominator";
    case ErrorKind::ConstantImage: return "ConstantImage";
    case ErrorKind::ImageTooSmall: return "ImageTooSmall";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace helio
