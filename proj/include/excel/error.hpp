#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace excel {

enum class ErrorCode {
  // numerical
  RankDeficient,
  NonFinite,
  DegenerateQuantile,
  DegenerateCandidate,
  ResampleInstability,
  SolverFailure,
  // data
  DimensionMismatch,
  OutOfRange,
  TooFewObservations,
  IndexOutOfRange,
  MissingInstruments,
  MissingClusterIds,
  FileNotFound,
  ParseError,
  EmptyAfterCleaning,
  // configuration
  InvalidArgument,
  UnknownOverride,
  IncompatibleMethodScenario,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

enum class ErrorCategory { Config, Data, Numerical };

ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace excel
