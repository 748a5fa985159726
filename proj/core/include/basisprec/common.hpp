#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace basisprec {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Flat model parameter vector; the optimization state.
using ParamVector = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violates a documented precondition (non-finite entries, bad range).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Basis has det < 0 or a rotation angle at pi; the principal log is undefined.
class NonInterpolableBasis : public Error {
 public:
  using Error::Error;
};

class SingularInput : public Error {
 public:
  using Error::Error;
};

class SearchExhausted : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

inline void require_same_size(Index a, Index b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": size " + std::to_string(a) +
                     " does not match " + std::to_string(b));
  }
}

}  // namespace basisprec
