#pragma once

#include <algorithm>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace crcterm {

using Complex = std::complex<double>;
using CVec = std::vector<Complex>;
using RVec = std::vector<double>;

inline constexpr Complex kI{0.0, 1.0};

enum class ErrorCode {
    ZeroValue,
    BranchJump,
    Unsupported,
    HorizonExhausted,
    DomainExit,
    Overflow,
    OdeStep,
    Unsolvable,
    ExtrapolationNeeded,
    AdmissibilityExhausted,
    TooShort,
    Degenerate,
    InsufficientPaths,
    PinMissing,
    TooLarge,
    InvalidArgument,
    Parse,
    Validation,
    Io,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::ZeroValue: return "ZeroValue";
        case ErrorCode::BranchJump: return "BranchJump";
        case ErrorCode::Unsupported: return "Unsupported";
        case ErrorCode::HorizonExhausted: return "HorizonExhausted";
        case ErrorCode::DomainExit: return "DomainExit";
        case ErrorCode::Overflow: return "Overflow";
        case ErrorCode::OdeStep: return "OdeStep";
        case ErrorCode::Unsolvable: return "Unsolvable";
        case ErrorCode::ExtrapolationNeeded: return "ExtrapolationNeeded";
        case ErrorCode::AdmissibilityExhausted: return "AdmissibilityExhausted";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::Degenerate: return "Degenerate";
        case ErrorCode::InsufficientPaths: return "InsufficientPaths";
        case ErrorCode::PinMissing: return "PinMissing";
        case ErrorCode::TooLarge: return "TooLarge";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::Parse: return "Parse";
        case ErrorCode::Validation: return "Validation";
        case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

/// All library failures surface as this exception; `code()` tells callers
/// (and the CLI exit-code table) which contract was violated.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) fail(code, what);
}

inline double max_abs_diff(const CVec& a, const CVec& b) {
    require(a.size() == b.size(), ErrorCode::InvalidArgument, "max_abs_diff: size mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace crcterm
