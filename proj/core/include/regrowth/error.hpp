#pragma once

#include <stdexcept>
#include <string>

namespace regrowth {

// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed on-disk artifact (bad magic, truncated payload, unparsable row).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Caller supplied arguments that violate a precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// File could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

// A numerical routine could not produce a usable answer.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace regrowth
