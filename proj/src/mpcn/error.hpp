#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mpcn {

// Error taxonomy aligned with process exit codes:
//   usage/config errors -> 1, data/IO/format errors -> 2, numeric failures -> 3.
class Error : public std::runtime_error {
 public:
  Error(std::string msg, int exit_code)
      : std::runtime_error(std::move(msg)), exit_code_(exit_code) {}
  int exit_code() const { return exit_code_; }

 private:
  int exit_code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(std::string msg) : Error(std::move(msg), 1) {}
};

class DataError : public Error {
 public:
  explicit DataError(std::string msg) : Error(std::move(msg), 2) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(std::string msg) : Error(std::move(msg), 3) {}
};

// Shape mismatches surface as numeric failures; messages name both shapes.
class DimensionError : public NumericError {
 public:
  explicit DimensionError(std::string msg) : NumericError(std::move(msg)) {}
};

}  // namespace mpcn
