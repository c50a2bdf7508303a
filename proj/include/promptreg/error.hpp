#pragma once

#include <stdexcept>
#include <string>

namespace promptreg {

// Base of every error the library raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent on-disk artifact (header/raw mismatch, bad dtype, ...).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Geometry or channel mismatch between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Value outside an operation's domain (empty mask, invalid policy, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

// Ambiguous or degenerate synthetic scene.
class FixtureError : public Error {
 public:
  using Error::Error;
};

}  // namespace promptreg
