#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mhqa {

/// Broad failure classes. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
  kConfig,
  kData,
  kIo,
  kRuntime,
  kDependency,
  kAuth,
};

std::string_view to_string(ErrorCategory category);

/// Process exit code for a category (0 is reserved for success, 1 for usage).
int exit_code(ErrorCategory category);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message) : Error(ErrorCategory::kConfig, message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error(ErrorCategory::kData, message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error(ErrorCategory::kIo, message) {}
};

class RuntimeError : public Error {
 public:
  explicit RuntimeError(const std::string& message) : Error(ErrorCategory::kRuntime, message) {}
};

/// A stage was run before the stage that produces one of its inputs.
class DependencyError : public Error {
 public:
  DependencyError(const std::string& missing_stage, const std::string& message)
      : Error(ErrorCategory::kDependency, message), missing_stage_(missing_stage) {}

  const std::string& missing_stage() const noexcept { return missing_stage_; }

 private:
  std::string missing_stage_;
};

class AuthError : public Error {
 public:
  explicit AuthError(const std::string& message) : Error(ErrorCategory::kAuth, message) {}
};

}  // namespace mhqa
