#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace secura {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, int iterations)
      : Error(what), iterations_(iterations) {}
  int iterations() const noexcept { return iterations_; }

 private:
  int iterations_;
};

// Non-finite loss during training; carries the offending step.
class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace secura
