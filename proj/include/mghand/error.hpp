#pragma once

#include <stdexcept>
#include <string>

namespace mghand {

enum class ErrorCode {
    kInvalidArgument = 1,
    kNumericalDegeneracy = 2,
    kGuidanceDiverged = 3,
    kTrainingDiverged = 4,
    kIo = 5,
    kConfig = 6,
    kCaptionFailed = 7,
    kUndefinedMetric = 8,
    kInternal = 99,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

inline void require(bool condition, const std::string& message) {
    if (!condition) {
        fail(ErrorCode::kInvalidArgument, message);
    }
}

}  // namespace mghand
