#pragma once

#include <stdexcept>
#include <string>

namespace fcl {

// Base of every error the library throws. Callers that only need a
// diagnostic can catch this; the subclasses mark which contract broke.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Shapes, labels or indices that violate an operation's precondition.
class InvalidInput : public Error {
public:
  using Error::Error;
};

// A numeric parameter outside its admissible range (T <= 0, alpha+beta > 1).
class InvalidParameter : public Error {
public:
  using Error::Error;
};

// Experiment configuration that cannot be satisfied.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Malformed or missing dataset files. The message names file and line.
class IngestionError : public Error {
public:
  using Error::Error;
};

// A metric asked for over an empty population.
class UndefinedMetric : public Error {
public:
  using Error::Error;
};

} // namespace fcl
