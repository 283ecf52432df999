#pragma once

#include <stdexcept>
#include <string>

namespace retina {

// Stable error identities surfaced by every module. The CLI maps these to
// exit codes (config=2, data=3, runtime=4).
enum class Errc {
  // dataset
  MissingFile,
  MalformedRow,
  DuplicateId,
  EmptyManifest,
  EmptyClass,
  // imageops / augment
  InvalidSigma,
  InvalidSize,
  NonSquareInput,
  // modelkit
  UnsupportedCombination,
  InvalidTask,
  InvalidFanIn,
  ShapeMismatch,
  InputTooSmall,
  MissingBackboneAdapter,
  CheckpointMismatch,
  // metrics
  ScoreOutOfRange,
  EmptyVector,
  LabelOutOfRange,
  LengthMismatch,
  EmptyMatrix,
  DegenerateLabels,
  // cascade
  MissingScore,
  MissingNodeModel,
  // trainer / orchestration
  NonFiniteLoss,
  ConfigError,
  IoError,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::EmptyManifest: return "EmptyManifest";
    case Errc::EmptyClass: return "EmptyClass";
    case Errc::InvalidSigma: return "InvalidSigma";
    case Errc::InvalidSize: return "InvalidSize";
    case Errc::NonSquareInput: return "NonSquareInput";
    case Errc::UnsupportedCombination: return "UnsupportedCombination";
    case Errc::InvalidTask: return "InvalidTask";
    case Errc::InvalidFanIn: return "InvalidFanIn";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::InputTooSmall: return "InputTooSmall";
    case Errc::MissingBackboneAdapter: return "MissingBackboneAdapter";
    case Errc::CheckpointMismatch: return "CheckpointMismatch";
    case Errc::ScoreOutOfRange: return "ScoreOutOfRange";
    case Errc::EmptyVector: return "EmptyVector";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyMatrix: return "EmptyMatrix";
    case Errc::DegenerateLabels: return "DegenerateLabels";
    case Errc::MissingScore: return "MissingScore";
    case Errc::MissingNodeModel: return "MissingNodeModel";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::ConfigError: return "ConfigError";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace retina
