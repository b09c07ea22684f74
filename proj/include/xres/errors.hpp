#pragma once

#include <stdexcept>
#include <string>

namespace xres {

// Process exit codes shared by every CLI command.
enum class ExitCode : int {
  kOk = 0,
  kGeneric = 1,
  kConfigError = 2,
  kDataError = 3,
  kDivergence = 4,
  kIncompatible = 5,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const { return ExitCode::kGeneric; }
};

// A precondition on an argument was violated (bad size, bad count, ...).
class InvalidInput : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kDataError; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kConfigError; }
};

// I/O failures, empty datasets, unreadable files.
class DataError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kDataError; }
};

class NumericError : public Error {
 public:
  NumericError(std::string component, const std::string& what)
      : Error(what), component_(std::move(component)) {}
  const std::string& component() const { return component_; }
  ExitCode exit_code() const override { return ExitCode::kDivergence; }

 private:
  std::string component_;
};

class IncompatibleError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const override { return ExitCode::kIncompatible; }
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidInput(message);
}

}  // namespace xres
