#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prsfda {

enum class ErrorKind {
  kInvalidInput,
  kOracleFailure,
  kConfig,
  kShape,
  kTrainingDivergence,
  kSchedule,
  kLabel,
  kMask,
  kSpec,
  kFormat,
  kIo,
  kRole,
  kMissingLabels,
  kLabelAccess,
  kEmptyEvaluation,
  kNoSignal,
  kPartialResults,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for every domain failure; `kind()` distinguishes them.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidInput: return "invalid input";
    case ErrorKind::kOracleFailure: return "oracle failure";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kTrainingDivergence: return "training divergence";
    case ErrorKind::kSchedule: return "schedule error";
    case ErrorKind::kLabel: return "label error";
    case ErrorKind::kMask: return "mask error";
    case ErrorKind::kSpec: return "spec error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kIo: return "io error";
    case ErrorKind::kRole: return "role error";
    case ErrorKind::kMissingLabels: return "missing labels";
    case ErrorKind::kLabelAccess: return "label access violation";
    case ErrorKind::kEmptyEvaluation: return "empty evaluation";
    case ErrorKind::kNoSignal: return "no signal";
    case ErrorKind::kPartialResults: return "partial results";
  }
  return "error";
}

}  // namespace prsfda
