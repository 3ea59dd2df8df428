#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace peci {

enum class ErrorCode {
  ImageTooSmall,
  EmptyHistogram,
  ShapeMismatch,
  HeadsDontDivide,
  IndexOutOfRange,
  NotScalar,
  EpochOutOfRange,
  ConfigInvalid,
  BlockOutOfRange,
  EmptyDataset,
  MissingFile,
  BadMaskShape,
  BadManifest,
  TooFewPatients,
  BadParams,
  IoError,
  VersionMismatch,
  CorruptFile,
  Diverged,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::EmptyHistogram: return "EmptyHistogram";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::HeadsDontDivide: return "HeadsDontDivide";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::EpochOutOfRange: return "EpochOutOfRange";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::BlockOutOfRange: return "BlockOutOfRange";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::BadMaskShape: return "BadMaskShape";
    case ErrorCode::BadManifest: return "BadManifest";
    case ErrorCode::TooFewPatients: return "TooFewPatients";
    case ErrorCode::BadParams: return "BadParams";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::Diverged: return "Diverged";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace peci
