#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>

namespace qsc {

/// Tally of runtime invariant checks. `worst_slack` is the smallest
/// normalized slack seen; negative means at least one violation.
struct InvariantStats {
    std::size_t checks = 0;
    std::size_t violations = 0;
    double worst_slack = std::numeric_limits<double>::infinity();

    void record(bool ok, double slack)
    {
        ++checks;
        if (!ok)
            ++violations;
        worst_slack = std::min(worst_slack, slack);
    }

    void merge(const InvariantStats& other)
    {
        checks += other.checks;
        violations += other.violations;
        worst_slack = std::min(worst_slack, other.worst_slack);
    }

    bool clean() const noexcept { return violations == 0; }
};

enum class OutcomeTag { Primal, Dual };

inline const char* to_string(OutcomeTag tag) noexcept
{
    return tag == OutcomeTag::Primal ? "primal" : "dual";
}

/// Iteration split by width regime; solver_calls counts linear solves.
struct IterationCounts {
    std::size_t total = 0;
    std::size_t high_width = 0;
    std::size_t low_width = 0;
    std::size_t solver_calls = 0;

    void merge(const IterationCounts& o)
    {
        total += o.total;
        high_width += o.high_width;
        low_width += o.low_width;
        solver_calls += o.solver_calls;
    }
};

/// What happened in one IRLS iteration.
enum class StepKind { HighWidth, LowWidth, PrimalReturn, AveragePrimalReturn, DualReturn };

inline const char* to_string(StepKind k) noexcept
{
    switch (k) {
    case StepKind::HighWidth:           return "high";
    case StepKind::LowWidth:            return "low";
    case StepKind::PrimalReturn:        return "primal";
    case StepKind::AveragePrimalReturn: return "primal_avg";
    case StepKind::DualReturn:          return "dual";
    }
    return "?";
}

} // namespace qsc
