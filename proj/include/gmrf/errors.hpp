#pragma once

#include <stdexcept>
#include <string>

namespace gmrf {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Failures caused by the numbers themselves (CLI exit code 4).
class NumericalError : public Error {
public:
  using Error::Error;
};

class NotSpd : public NumericalError {
public:
  explicit NotSpd(const std::string& what = "matrix is not positive-definite")
      : NumericalError(what) {}
};

class SingularCovariance : public NumericalError {
public:
  explicit SingularCovariance(const std::string& what = "covariance is singular")
      : NumericalError(what) {}
};

class LineSearchFailed : public NumericalError {
public:
  explicit LineSearchFailed(const std::string& what = "line search found no acceptable step")
      : NumericalError(what) {}
};

/// A precision estimator failed inside EM; the message names the component
/// and the iteration.
class EstimatorFailed : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class EmptyComponent : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class DegenerateInit : public NumericalError {
public:
  using NumericalError::NumericalError;
};

/// Misuse of an API: shapes, lengths, supports that do not fit together.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

class DimensionMismatch : public InvalidArgument {
public:
  explicit DimensionMismatch(const std::string& what = "dimension mismatch")
      : InvalidArgument(what) {}
};

class LengthMismatch : public InvalidArgument {
public:
  explicit LengthMismatch(const std::string& what = "label sequences differ in length")
      : InvalidArgument(what) {}
};

class EmptyInput : public InvalidArgument {
public:
  explicit EmptyInput(const std::string& what = "empty input") : InvalidArgument(what) {}
};

/// Reading or writing files (CLI exit code 3).
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace gmrf
