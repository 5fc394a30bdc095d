#pragma once

// (1+eps)-approximate l-infinity regression
//
//     minimize ||A x||_inf  subject to  g^T x = -1
//
// by a binary search over guesses M on a geometric grid, where each guess is
// decided by an IRLS subsolver that either returns x with ||Ax||_inf <= (1+eps) M
// or a resistance vector r with E(r)/||r||_1 >= (M/(1+eps))^2, which certifies
// that the optimum is at least M/(1+eps).

#include <qsc/diagnostics.hpp>
#include <qsc/error.hpp>
#include <qsc/lewis.hpp>
#include <qsc/linalg.hpp>

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace qsc {

/// min ||Ax||_inf over g^T x = -1.
struct LinfInstance {
    Matrix A;
    Vector g;
};

/// [A | -b] with g = -e_{d+1}; the pinned last coordinate equals 1 on the
/// constraint hyperplane so that A' x' = A x - b.
inline LinfInstance homogenize(const Matrix& A, const Vector& b)
{
    require(b.size() == A.rows(), ErrorKind::DimensionMismatch,
            "right-hand side length must equal the number of rows");
    LinfInstance inst;
    inst.A.resize(A.rows(), A.cols() + 1);
    inst.A.leftCols(A.cols()) = A;
    inst.A.col(A.cols()) = -b;
    inst.g = Vector::Zero(A.cols() + 1);
    inst.g[A.cols()] = -1.0;
    return inst;
}

/// Drops the pinned coordinate of a homogenized solution.
inline Vector dehomogenize(const Vector& x)
{
    return x.head(x.size() - 1) / x[x.size() - 1];
}

struct LinfTraceRecord {
    std::size_t call = 0; ///< subsolver invocation index within one regression
    double M = 0.0;
    std::size_t t = 0;
    double mass = 0.0;
    double energy = 0.0;
    double width = 0.0;
    StepKind kind = StepKind::LowWidth;
};

using LinfTraceSink = std::function<void(const LinfTraceRecord&)>;

struct SubsolverOptions {
    bool verify = false;
    double budget_multiplier = 200.0;
    LinfTraceSink trace;
    std::size_t call_index = 0;
};

struct SubsolverOutcome {
    OutcomeTag tag = OutcomeTag::Dual;
    Vector x;            ///< primal solution (Primal only)
    ResistanceVector r;  ///< certificate (Dual only)
    double ratio = 0.0;  ///< E(r)/||r||_1 of the certificate (Dual only)
    double width = 0.0;  ///< ||Ax||_inf of the returned x (Primal only)
    IterationCounts counts;
    InvariantStats invariants;
    std::size_t verification_solves = 0;
};

/// Linear-solve budget of one subsolver call.
inline double subsolver_solve_budget(Index n, Index d, double eps, double multiplier = 200.0)
{
    const double dd = std::cbrt(static_cast<double>(d));
    return multiplier * (dd / eps + 1.0 / (eps * eps))
        * std::log(static_cast<double>(n) / eps);
}

/// Bound on high-width iterations of one subsolver call.
inline double subsolver_high_width_bound(Index d, double eps)
{
    return 6.0 * std::cbrt(static_cast<double>(d)) / eps;
}

/// Decides the guess M: primal x with ||Ax||_inf <= (1+eps) M, or a dual certificate.
inline SubsolverOutcome subsolver(const LinfInstance& inst, double eps, double M,
                                  const LewisOverestimate& lewis,
                                  const SubsolverOptions& opts = {})
{
    require(M > 0.0 && std::isfinite(M), ErrorKind::InvalidArgument, "guess M must be positive");
    require(eps > 0.0 && eps < 1.0, ErrorKind::InvalidArgument, "eps must lie in (0, 1)");
    const ProblemMatrix mat(inst.A);
    const Matrix& A = mat.A();
    const Index n = A.rows();
    const Index d = A.cols();
    require(lewis.w.size() == n, ErrorKind::DimensionMismatch,
            "Lewis weights must have one entry per row");

    const double target = (1.0 + eps) * M;
    const double dual_ratio = (M / (1.0 + eps)) * (M / (1.0 + eps));
    const double high_width = std::cbrt(static_cast<double>(d)) * M;
    const double low_update = (1.0 + eps) * M * M;
    const double budget = subsolver_solve_budget(n, d, eps, opts.budget_multiplier);

    Vector r = lewis.w.array() + static_cast<double>(d) / static_cast<double>(n);
    const double cap = r.sum() / eps;
    Vector running = Vector::Zero(d);
    std::size_t low_count = 0;

    SubsolverOutcome out;
    std::optional<double> prev_energy;
    double prev_mass = 0.0;
    Vector prev_r;

    auto check_step = [&](double e, double mass) {
        if (!opts.verify || !prev_energy)
            return;
        const double gain = e - *prev_energy;
        const double need = M * M * (mass - prev_mass);
        const double slack = gain - need + 1e-8 * e;
        out.invariants.record(slack >= 0.0, slack / std::max(e, 1e-300));
        const bool monotone = (r.array() >= prev_r.array()).all();
        out.invariants.record(monotone, monotone ? 0.0 : -1.0);
    };
    auto emit = [&](std::size_t t, double mass, double e, double width, StepKind kind) {
        if (opts.trace)
            opts.trace({opts.call_index, M, t, mass, e, width, kind});
    };

    std::size_t t = 0;
    while (r.sum() <= cap) {
        if (static_cast<double>(out.counts.solver_calls) >= budget)
            fail(ErrorKind::SolverBudgetExceeded, "l-inf subsolver exceeded its linear-solve budget");
        const EnergySolve sol = minimize_energy(mat, r, inst.g);
        ++out.counts.solver_calls;
        ++out.counts.total;
        const double mass = r.sum();
        check_step(sol.energy, mass);

        const Vector Ax = A * sol.x;
        const double width = Ax.cwiseAbs().maxCoeff();
        if (sol.energy / mass >= dual_ratio) {
            out.tag = OutcomeTag::Dual;
            out.ratio = sol.energy / mass;
            out.r = ResistanceVector(r);
            emit(t, mass, sol.energy, width, StepKind::DualReturn);
            return out;
        }
        if (width <= target) {
            out.tag = OutcomeTag::Primal;
            out.x = sol.x;
            out.width = width;
            emit(t, mass, sol.energy, width, StepKind::PrimalReturn);
            return out;
        }

        prev_energy = sol.energy;
        prev_mass = mass;
        if (opts.verify)
            prev_r = r;

        if (width > high_width) {
            ++out.counts.high_width;
            r[detail::first_argmax_abs(Ax)] += 1.0;
            emit(t, mass, sol.energy, width, StepKind::HighWidth);
        } else {
            ++out.counts.low_width;
            ++low_count;
            running += sol.x;
            const Vector avg = running / static_cast<double>(low_count);
            const double avg_width = (A * avg).cwiseAbs().maxCoeff();
            if (avg_width <= target) {
                out.tag = OutcomeTag::Primal;
                out.x = avg;
                out.width = avg_width;
                emit(t, mass, sol.energy, avg_width, StepKind::AveragePrimalReturn);
                return out;
            }
            for (Index j = 0; j < n; ++j) {
                const double sq = Ax[j] * Ax[j];
                if (sq >= low_update)
                    r[j] *= sq / (M * M);
            }
            emit(t, mass, sol.energy, width, StepKind::LowWidth);
        }
        ++t;
    }

    out.tag = OutcomeTag::Dual;
    out.r = ResistanceVector(r);
    const double mass = r.sum();
    if (opts.verify) {
        const EnergySolve sol = minimize_energy(mat, r, inst.g);
        ++out.verification_solves;
        check_step(sol.energy, mass);
        out.ratio = sol.energy / mass;
        const double slack = out.ratio - dual_ratio * (1.0 - 1e-8);
        out.invariants.record(slack >= 0.0, slack / dual_ratio);
        emit(t, mass, sol.energy, (A * sol.x).cwiseAbs().maxCoeff(), StepKind::DualReturn);
    } else {
        out.ratio = energy(mat, out.r, inst.g) / mass;
        emit(t, mass, out.ratio * mass, 0.0, StepKind::DualReturn);
    }
    return out;
}

struct LinfOptions {
    bool verify = false;
    double budget_multiplier = 200.0;
    LewisOptions lewis;
    LinfTraceSink trace;
};

/// Summary of one subsolver call inside the binary search.
struct SubsolverCall {
    long exponent = 0;
    double M = 0.0;
    OutcomeTag tag = OutcomeTag::Dual;
    double ratio = 0.0;
    double width = 0.0;
    IterationCounts counts;
};

struct LinfResult {
    Vector x;
    double value = 0.0;          ///< ||Ax||_inf
    double eps = 0.0;            ///< requested accuracy after clamping
    double grid_eps = 0.0;       ///< ratio of the geometric search grid
    long lower = 0, upper = 0;   ///< initial search exponents
    std::size_t binary_steps = 0;
    double lower_bound = 0.0;    ///< best certified lower bound on the optimum
    std::vector<SubsolverCall> calls;
    IterationCounts counts;
    InvariantStats invariants;
    LewisOverestimate lewis;
};

/// Largest accepted accuracy; larger requests are clamped.
inline constexpr double kMaxLinfEps = 0.5;

/// Grid ratio used by the binary search: three grid steps compose to (1 + eps).
inline double linf_grid_eps(double eps)
{
    return std::cbrt(1.0 + eps) - 1.0;
}

/// Returns x with g^T x = -1 and ||Ax||_inf <= (1 + eps) min_{g^T y = -1} ||Ay||_inf.
inline LinfResult linf_regress(const Matrix& A, const Vector& g, double eps,
                               const LinfOptions& opts = {})
{
    require(eps > 0.0, ErrorKind::InvalidArgument, "eps must be positive");
    require(g.size() == A.cols(), ErrorKind::DimensionMismatch,
            "g length must equal the number of columns");
    require(g.norm() > 0.0, ErrorKind::InvalidArgument, "g must be nonzero");
    const ProblemMatrix mat(A);
    const Index n = A.rows();

    LinfResult res;
    res.eps = std::min(eps, kMaxLinfEps);
    res.grid_eps = linf_grid_eps(res.eps);
    const double base = std::log1p(res.grid_eps);

    std::optional<EnergySolve> start;
    try {
        start = minimize_energy(mat, Vector::Ones(n), g);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::SingularSystem)
            throw;
    }
    if (!start) {
        // g reaches outside the row space of A: some x in ker A meets the
        // hyperplane and the optimum is exactly zero.
        res.x = detail::kernel_hit(A, g);
        res.value = (A * res.x).cwiseAbs().maxCoeff();
        return res;
    }
    res.x = start->x;
    const double norm2 = (A * start->x).norm();
    res.value = (A * start->x).cwiseAbs().maxCoeff();
    if (norm2 == 0.0)
        return res;

    res.lower = static_cast<long>(std::floor(std::log(norm2 / std::sqrt(static_cast<double>(n))) / base));
    res.upper = static_cast<long>(std::floor(std::log(norm2) / base));
    res.lower_bound = norm2 / std::sqrt(static_cast<double>(n));
    if (opts.verify) {
        // x0 certifies the top of the grid.
        const double top = std::pow(1.0 + res.grid_eps, res.upper + 1);
        res.invariants.record(res.value <= top * (1.0 + 1e-12), (top - res.value) / top);
    }

    res.lewis = approx_lewis(mat, opts.lewis);
    const LinfInstance inst{A, g};

    long L = res.lower, U = res.upper;
    while (L < U) {
        const long P = L + (U - L) / 2;
        const double M = std::pow(1.0 + res.grid_eps, static_cast<double>(P));
        SubsolverOptions sopts;
        sopts.verify = opts.verify;
        sopts.budget_multiplier = opts.budget_multiplier;
        sopts.trace = opts.trace;
        sopts.call_index = res.binary_steps;
        const SubsolverOutcome out = subsolver(inst, res.grid_eps, M, res.lewis, sopts);
        ++res.binary_steps;
        res.counts.merge(out.counts);
        res.invariants.merge(out.invariants);
        res.calls.push_back({P, M, out.tag, out.ratio, out.width, out.counts});
        if (out.tag == OutcomeTag::Dual) {
            L = P + 1;
            res.lower_bound = std::max(res.lower_bound, std::sqrt(out.ratio));
        } else {
            U = P;
            res.x = out.x;
            res.value = out.width;
        }
    }
    return res;
}

/// min ||Ax - b||_inf; returns the un-homogenized minimizer.
struct LinfFitResult {
    Vector x;
    double value = 0.0;
    LinfResult detail;
};

inline LinfFitResult linf_fit(const Matrix& A, const Vector& b, double eps,
                              const LinfOptions& opts = {})
{
    const LinfInstance inst = homogenize(A, b);
    LinfFitResult out;
    out.detail = linf_regress(inst.A, inst.g, eps, opts);
    out.x = dehomogenize(out.detail.x);
    out.value = (A * out.x - b).cwiseAbs().maxCoeff();
    return out;
}

} // namespace qsc
