#include "patchgen/error.hpp"

namespace patchgen {

std::string_view to_string(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::kConfig: return "config";
    case ErrorCategory::kDegenerateInput: return "degenerate_input";
    case ErrorCategory::kShape: return "shape";
    case ErrorCategory::kInsufficientPatches: return "insufficient_patches";
    case ErrorCategory::kEmptyCandidates: return "empty_candidates";
    case ErrorCategory::kIntegrity: return "integrity";
    case ErrorCategory::kIo: return "io";
    case ErrorCategory::kNonFinite: return "non_finite";
    case ErrorCategory::kInternal: return "internal";
  }
  return "internal";
}

}  // namespace patchgen
