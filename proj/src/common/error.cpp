#include "kdrank/error.hpp"

namespace kdrank {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kPoisonedStep: return "poisoned-step";
    case ErrorKind::kInputLength: return "input-length";
    case ErrorKind::kIncompatibleShapes: return "incompatible-shapes";
    case ErrorKind::kCorruptHeader: return "corrupt-header";
    case ErrorKind::kTruncated: return "truncated";
    case ErrorKind::kVersionMismatch: return "version-mismatch";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kUnsupportedMap: return "unsupported-map";
    case ErrorKind::kLoss: return "loss";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kDegeneratePairs: return "degenerate-pairs";
  }
  return "unknown";
}

}  // namespace kdrank
