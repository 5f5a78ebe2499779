#pragma once

#include <stdexcept>
#include <string>

namespace mfblue {

/// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotASubset : Error {
  using Error::Error;
};
struct DimensionMismatch : Error {
  using Error::Error;
};
struct InsufficientSamples : Error {
  using Error::Error;
};
struct RankDeficient : Error {
  using Error::Error;
};
struct SingularMatrix : Error {
  using Error::Error;
};
struct SingularGroupCovariance : Error {
  using Error::Error;
};
struct SingularNormalMatrix : Error {
  using Error::Error;
};
struct Infeasible : Error {
  using Error::Error;
};
struct NumericalFailure : Error {
  using Error::Error;
};
struct OutOfDomain : Error {
  using Error::Error;
};

/// A subset whose exploration-phase statistics cannot be formed yet
/// (rank-deficient fit or singular empirical group covariance). The
/// adaptive loop skips such subsets for the current round only.
struct InadmissibleSubset : Error {
  using Error::Error;
};

struct FixtureNotFound : Error {
  using Error::Error;
};

/// Malformed experiment/fixture files: unknown keys, bad dimensions,
/// missing fields. Always fatal.
struct SpecError : Error {
  using Error::Error;
};

}  // namespace mfblue
