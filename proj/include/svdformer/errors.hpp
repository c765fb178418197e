#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace svdf {

/// Malformed or unreadable input data (files, manifests, clouds).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class NumericalAbort : public std::runtime_error {
 public:
  NumericalAbort(std::size_t step, const std::string& what)
      : std::runtime_error("numerical abort at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace svdf
