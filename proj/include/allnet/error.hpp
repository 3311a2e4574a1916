#pragma once

#include <stdexcept>
#include <string>

namespace allnet {

/// Base of every error the library throws. `exit_code()` is the process
/// status the command-line tool maps the error to.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

/// Bad command-line usage or configuration.
class UsageError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

/// Malformed or inconsistent data: manifests, images, checkpoints, shapes.
class DataError : public Error {
public:
  using Error::Error;
};

class ShapeError : public DataError {
public:
  using DataError::DataError;
};

/// An op whose output would have a spatial extent below one.
class DegenerateOutputError : public ShapeError {
public:
  using ShapeError::ShapeError;
};

/// Non-finite loss or gradient.
class NumericError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

class IoError : public Error {
public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

} // namespace allnet
