#include "mghand/error.hpp"

namespace mghand {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::kInvalidArgument: return "invalid-argument";
        case ErrorCode::kNumericalDegeneracy: return "numerical-degeneracy";
        case ErrorCode::kGuidanceDiverged: return "guidance-diverged";
        case ErrorCode::kTrainingDiverged: return "training-diverged";
        case ErrorCode::kIo: return "io-error";
        case ErrorCode::kConfig: return "config-error";
        case ErrorCode::kCaptionFailed: return "caption-failed";
        case ErrorCode::kUndefinedMetric: return "undefined-metric";
        case ErrorCode::kInternal: return "internal";
    }
    return "unknown";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace mghand
