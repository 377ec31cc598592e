#pragma once

#include <stdexcept>
#include <string>

namespace setdet {

// Base of every error the library raises. Callers that only care about
// "something in setdet failed" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Tensor extents do not agree for the requested operation.
class DimensionError : public ContractError {
 public:
  using ContractError::ContractError;
};

// A forward computation produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

// More ground-truth objects than prediction slots.
class CapacityExceeded : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class MissingFile : public LoadError {
 public:
  using LoadError::LoadError;
};

class MalformedRecord : public LoadError {
 public:
  using LoadError::LoadError;
};

class DanglingReference : public LoadError {
 public:
  using LoadError::LoadError;
};

class CorruptCheckpoint : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public CorruptCheckpoint {
 public:
  using CorruptCheckpoint::CorruptCheckpoint;
};

// Invalid run configuration (bad value, missing path, incompatible checkpoint).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace setdet
