#pragma once

#include <stdexcept>
#include <string>

namespace mint {

// Error hierarchy mirrored by the CLI exit contract:
// validation/config/usage -> exit 1, io -> exit 2.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& detail)
      : std::runtime_error(detail), category_(std::move(category)) {}
  const std::string& category() const { return category_; }

 private:
  std::string category_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& detail) : Error("validation", detail) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& detail) : Error("config", detail) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& detail) : Error("usage", detail) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& detail) : Error("io", detail) {}
};

}  // namespace mint
