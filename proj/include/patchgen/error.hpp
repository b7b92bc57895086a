#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace patchgen {

enum class ErrorCategory {
  kConfig,
  kDegenerateInput,
  kShape,
  kInsufficientPatches,
  kEmptyCandidates,
  kIntegrity,
  kIo,
  kNonFinite,
  kInternal,
};

std::string_view to_string(ErrorCategory category);

// Every recoverable failure in the library is reported through this type so
// that the CLI can map it onto an exit code and an `ERROR:<category>:` line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory category, const std::string& message) {
  throw Error(category, message);
}

}  // namespace patchgen
