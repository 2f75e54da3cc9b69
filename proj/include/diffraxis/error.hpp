#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace diffraxis {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// A precondition on an argument was violated.
class InvalidInput : public Error {
public:
  using Error::Error;
};

// Argument outside the mathematical domain of a formula (e.g. sin(theta) == 0).
class DomainError : public Error {
public:
  using Error::Error;
};

// An iterative stage failed to converge or hit a numerical guard.
class NumericalDiagnostic : public Error {
public:
  NumericalDiagnostic(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

private:
  std::string stage_;
};

class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace diffraxis
