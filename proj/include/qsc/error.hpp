#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qsc {

enum class ErrorKind {
    InvalidArgument,
    NonFinite,
    SingularSystem,
    InfeasibleConstraint,
    RankDeficient,
    OverestimateFailure,
    SolverBudgetExceeded,
    NoProgress,
    SingularHessian,
    ParseError,
    DimensionMismatch,
    IoError,
};

inline std::string_view to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::InvalidArgument:      return "InvalidArgument";
    case ErrorKind::NonFinite:            return "NonFinite";
    case ErrorKind::SingularSystem:       return "SingularSystem";
    case ErrorKind::InfeasibleConstraint: return "InfeasibleConstraint";
    case ErrorKind::RankDeficient:        return "RankDeficient";
    case ErrorKind::OverestimateFailure:  return "OverestimateFailure";
    case ErrorKind::SolverBudgetExceeded: return "SolverBudgetExceeded";
    case ErrorKind::NoProgress:           return "NoProgress";
    case ErrorKind::SingularHessian:      return "SingularHessian";
    case ErrorKind::ParseError:           return "ParseError";
    case ErrorKind::DimensionMismatch:    return "DimensionMismatch";
    case ErrorKind::IoError:              return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {
    }

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what)
{
    throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const char* what)
{
    if (!cond)
        fail(kind, what);
}

} // namespace qsc
