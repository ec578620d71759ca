#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dropscan {

enum class ErrorKind {
  // ts_core
  TooFewResponses,
  NonMonotonicTimestamps,
  InvalidArgument,
  // arma
  NonStationaryParams,
  NonInvertibleParams,
  NumericalUnderflow,
  InsufficientData,
  SingularInformation,
  DegenerateSampleSize,
  NoConvergedModel,
  // intervention
  ScheduleExceedsSeries,
  RefitFailed,
  // probe_engine
  InjectionFailed,
  CapturePermissionDenied,
  SpoofSelfTestFailed,
  PortClosed,
  NoSynAck,
  // orchestrator / cli_store
  EngineFailure,
  MalformedRecord,
  ConfigError,
};

std::string_view to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// what() without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

inline std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::TooFewResponses: return "TooFewResponses";
    case ErrorKind::NonMonotonicTimestamps: return "NonMonotonicTimestamps";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NonStationaryParams: return "NonStationaryParams";
    case ErrorKind::NonInvertibleParams: return "NonInvertibleParams";
    case ErrorKind::NumericalUnderflow: return "NumericalUnderflow";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::SingularInformation: return "SingularInformation";
    case ErrorKind::DegenerateSampleSize: return "DegenerateSampleSize";
    case ErrorKind::NoConvergedModel: return "NoConvergedModel";
    case ErrorKind::ScheduleExceedsSeries: return "ScheduleExceedsSeries";
    case ErrorKind::RefitFailed: return "RefitFailed";
    case ErrorKind::InjectionFailed: return "InjectionFailed";
    case ErrorKind::CapturePermissionDenied: return "CapturePermissionDenied";
    case ErrorKind::SpoofSelfTestFailed: return "SpoofSelfTestFailed";
    case ErrorKind::PortClosed: return "PortClosed";
    case ErrorKind::NoSynAck: return "NoSynAck";
    case ErrorKind::EngineFailure: return "EngineFailure";
    case ErrorKind::MalformedRecord: return "MalformedRecord";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace dropscan
