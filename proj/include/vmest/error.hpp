#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace vmest {

enum class ErrorKind {
  NotPositiveDefinite,
  Singular,
  NonFiniteEvaluation,
  DomainError,
  OrderOutOfRange,
  ModeSearchFailed,
  CurvatureNotNegative,
  InnerDivergence,
  SaddleDetected,
  NoConvergedStart,
  InnerHessianSingular,
  AHatSingular,
  NegativeVariance,
  VHatSingular,
  SingularSampleCovariance,
  ZeroVariance,
  PreconditionFailed,
  QuadratureFailed,
  InfoSingular,
  NonIncreasingElbo,
  NoConvergence,
  InvalidInput,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorKind::Singular: return "Singular";
    case ErrorKind::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorKind::DomainError: return "DomainError";
    case ErrorKind::OrderOutOfRange: return "OrderOutOfRange";
    case ErrorKind::ModeSearchFailed: return "ModeSearchFailed";
    case ErrorKind::CurvatureNotNegative: return "CurvatureNotNegative";
    case ErrorKind::InnerDivergence: return "InnerDivergence";
    case ErrorKind::SaddleDetected: return "SaddleDetected";
    case ErrorKind::NoConvergedStart: return "NoConvergedStart";
    case ErrorKind::InnerHessianSingular: return "InnerHessianSingular";
    case ErrorKind::AHatSingular: return "AHatSingular";
    case ErrorKind::NegativeVariance: return "NegativeVariance";
    case ErrorKind::VHatSingular: return "VHatSingular";
    case ErrorKind::SingularSampleCovariance: return "SingularSampleCovariance";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::PreconditionFailed: return "PreconditionFailed";
    case ErrorKind::QuadratureFailed: return "QuadratureFailed";
    case ErrorKind::InfoSingular: return "InfoSingular";
    case ErrorKind::NonIncreasingElbo: return "NonIncreasingElbo";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library. `index()` carries the datum,
/// replicate or coordinate the failure is attached to, when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what, std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), index_(index) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> index() const noexcept { return index_; }

  /// Same error re-tagged with an outer index (e.g. a datum index).
  Error with_index(std::size_t index, const std::string& context) const {
    return Error(Raw{}, kind_, context + " " + std::to_string(index) + ": " + what(), index);
  }

 private:
  struct Raw {};
  Error(Raw, ErrorKind kind, const std::string& what, std::optional<std::size_t> index)
      : std::runtime_error(what), kind_(kind), index_(index) {}

  ErrorKind kind_;
  std::optional<std::size_t> index_;
};

}  // namespace vmest
