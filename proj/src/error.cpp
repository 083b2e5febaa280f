#include "excel/error.hpp"

namespace excel {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DegenerateQuantile: return "DegenerateQuantile";
    case ErrorCode::DegenerateCandidate: return "DegenerateCandidate";
    case ErrorCode::ResampleInstability: return "ResampleInstability";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::TooFewObservations: return "TooFewObservations";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::MissingInstruments: return "MissingInstruments";
    case ErrorCode::MissingClusterIds: return "MissingClusterIds";
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyAfterCleaning: return "EmptyAfterCleaning";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnknownOverride: return "UnknownOverride";
    case ErrorCode::IncompatibleMethodScenario: return "IncompatibleMethodScenario";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::RankDeficient:
    case ErrorCode::NonFinite:
    case ErrorCode::DegenerateQuantile:
    case ErrorCode::DegenerateCandidate:
    case ErrorCode::ResampleInstability:
    case ErrorCode::SolverFailure:
      return ErrorCategory::Numerical;
    case ErrorCode::InvalidArgument:
    case ErrorCode::UnknownOverride:
    case ErrorCode::IncompatibleMethodScenario:
    case ErrorCode::InvalidConfig:
      return ErrorCategory::Config;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace excel
