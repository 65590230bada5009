#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mever {

enum class ErrorKind {
  MissingFile,
  MalformedRecord,
  DanglingReference,
  EmptyImagePool,
  TooFewClaims,
  ShapeMismatch,
  EmptyText,
  DimensionMismatch,
  BatchTooSmall,
  EmptyCorpus,
  EmptyIndex,
  NoEvidence,
  UnknownLabel,
  OverLengthAfterTruncation,
  EmptyGold,
  EmptySequence,
  Diverged,
  MissingExplanations,
  VersionMismatch,
  CorruptFile,
  EmptyReference,
  LengthMismatch,
  IoFailure,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

// All recoverable failures in the library are reported through this type;
// `kind()` lets callers branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::DanglingReference: return "DanglingReference";
    case ErrorKind::EmptyImagePool: return "EmptyImagePool";
    case ErrorKind::TooFewClaims: return "TooFewClaims";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyText: return "EmptyText";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::BatchTooSmall: return "BatchTooSmall";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::EmptyIndex: return "EmptyIndex";
    case ErrorKind::NoEvidence: return "NoEvidence";
    case ErrorKind::UnknownLabel: return "UnknownLabel";
    case ErrorKind::OverLengthAfterTruncation: return "OverLengthAfterTruncation";
    case ErrorKind::EmptyGold: return "EmptyGold";
    case ErrorKind::EmptySequence: return "EmptySequence";
    case ErrorKind::Diverged: return "Diverged";
    case ErrorKind::MissingExplanations: return "MissingExplanations";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::EmptyReference: return "EmptyReference";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace mever
