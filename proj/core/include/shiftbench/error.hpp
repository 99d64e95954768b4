#pragma once

#include <stdexcept>
#include <string>

namespace shiftbench {

// Base for every error raised by the library. Callers that only care about
// "something went wrong in shiftbench" catch this; the subclasses carry the
// category for callers that need to branch.
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

class DataError : public Error {
 public:
  using Error::Error;
};

// Training produced a NaN/Inf. `step` and `term` locate it.
class DivergenceError : public Error {
 public:
  DivergenceError(long step, std::string term)
      : Error("non-finite loss at step " + std::to_string(step) + " in term '" + term + "'"),
        step_(step),
        term_(std::move(term)) {}

  long step() const noexcept { return step_; }
  const std::string& term() const noexcept { return term_; }

 private:
  long step_;
  std::string term_;
};

}  // namespace shiftbench
