#include "mhqa/error.hpp"

namespace mhqa {

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig:
      return "config";
    case ErrorCategory::kData:
      return "data";
    case ErrorCategory::kIo:
      return "io";
    case ErrorCategory::kRuntime:
      return "runtime";
    case ErrorCategory::kDependency:
      return "dependency";
    case ErrorCategory::kAuth:
      return "auth";
  }
  return "unknown";
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig:
      return 2;
    case ErrorCategory::kData:
      return 3;
    case ErrorCategory::kIo:
      return 4;
    case ErrorCategory::kRuntime:
      return 5;
    case ErrorCategory::kDependency:
      return 6;
    case ErrorCategory::kAuth:
      return 7;
  }
  return 5;
}

}  // namespace mhqa
