#pragma once

#include <stdexcept>
#include <string>

namespace effops {

// Every failure raised by the library carries the process exit code the CLI
// reports for it: 2 usage/validation, 3 missing prerequisite, 4 numeric.
class Error : public std::runtime_error {
 public:
  Error(int exit_code, const std::string& what)
      : std::runtime_error(what), exit_code_(exit_code) {}

  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(2, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(2, what) {}
};

class MissingPrerequisite : public Error {
 public:
  explicit MissingPrerequisite(const std::string& what) : Error(3, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(4, what) {}
};

// Corrupt or mismatched files on disk.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(3, what) {}
};

}  // namespace effops
