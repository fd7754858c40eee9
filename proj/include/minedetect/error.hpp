#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace minedetect {

enum class Errc {
  MissingColumn,
  MalformedRow,
  NoFlows,
  EmptyInput,
  AlreadyNormalized,
  UnknownVertex,
  SameVertex,
  DanglingEdge,
  WindowMismatch,
  MissingHostState,
  MissingVector,
  EmptyTrainingSet,
  UnnormalizedInput,
  LengthMismatch,
  EmptyMatrix,
  DegenerateLabels,
  ZeroSupport,
  InvalidConfig,
  WindowOutOfRange,
  FeatureOrderMismatch,
  UnknownSubcommand,
  ConflictingFlags,
  Io,
};

inline constexpr std::string_view errc_name(Errc c) noexcept {
  switch (c) {
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::MalformedRow: return "MalformedRow";
    case Errc::NoFlows: return "NoFlows";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::AlreadyNormalized: return "AlreadyNormalized";
    case Errc::UnknownVertex: return "UnknownVertex";
    case Errc::SameVertex: return "SameVertex";
    case Errc::DanglingEdge: return "DanglingEdge";
    case Errc::WindowMismatch: return "WindowMismatch";
    case Errc::MissingHostState: return "MissingHostState";
    case Errc::MissingVector: return "MissingVector";
    case Errc::EmptyTrainingSet: return "EmptyTrainingSet";
    case Errc::UnnormalizedInput: return "UnnormalizedInput";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyMatrix: return "EmptyMatrix";
    case Errc::DegenerateLabels: return "DegenerateLabels";
    case Errc::ZeroSupport: return "ZeroSupport";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::WindowOutOfRange: return "WindowOutOfRange";
    case Errc::FeatureOrderMismatch: return "FeatureOrderMismatch";
    case Errc::UnknownSubcommand: return "UnknownSubcommand";
    case Errc::ConflictingFlags: return "ConflictingFlags";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library. Carries a machine-checkable code, an
/// optional 1-based input line and, once it has crossed the pipeline, the
/// step number that raised it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::optional<std::size_t> line = std::nullopt)
      : std::runtime_error(compose(code, what, line, std::nullopt)),
        code_(code),
        detail_(what),
        line_(line) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }
  std::optional<std::size_t> line() const noexcept { return line_; }
  std::optional<int> step() const noexcept { return step_; }

  Error with_step(int step) const {
    Error e(*this, compose(code_, detail_, line_, step));
    e.step_ = step;
    return e;
  }

 private:
  Error(const Error& base, const std::string& message)
      : std::runtime_error(message),
        code_(base.code_),
        detail_(base.detail_),
        line_(base.line_),
        step_(base.step_) {}

  static std::string compose(Errc code, const std::string& what, std::optional<std::size_t> line,
                             std::optional<int> step) {
    std::string out;
    if (step) out += "step " + std::to_string(*step) + ": ";
    out += std::string(errc_name(code));
    if (line) out += " at line " + std::to_string(*line);
    out += ": " + what;
    return out;
  }

  Errc code_;
  std::string detail_;
  std::optional<std::size_t> line_;
  std::optional<int> step_;
};

}  // namespace minedetect
