#pragma once

#include <stdexcept>
#include <string>

namespace g3 {

// Base of every error the library raises on purpose. The CLI maps the
// subclasses onto exit codes: usage 1, data 2, transport 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller broke a precondition (bad shapes, empty inputs, out-of-range knobs).
class UsageError : public Error {
 public:
  using Error::Error;
};

// Input data is malformed or inconsistent.
class DataError : public Error {
 public:
  using Error::Error;
};

// Binary file has a bad magic, unknown version, or is truncated.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Free text did not contain a coordinate pair.
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

// A coordinate pair was found but lies outside the lat/lon ranges.
class RangeError : public DataError {
 public:
  using DataError::DataError;
};

// The LMM endpoint could not be reached or answered with an error status.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace g3
