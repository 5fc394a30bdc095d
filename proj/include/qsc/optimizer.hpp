#pragma once

// Trust-region outer loop for quasi-self-concordant objectives, and a damped
// Newton baseline used for comparison.

#include <qsc/diagnostics.hpp>
#include <qsc/error.hpp>
#include <qsc/lewis.hpp>
#include <qsc/linalg.hpp>
#include <qsc/loss.hpp>
#include <qsc/residual.hpp>

#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <thread>
#include <vector>

namespace qsc {

struct OuterTraceRecord {
    std::size_t t = 0;
    double h = 0.0;          ///< objective after the iteration
    double nu = 0.0;         ///< nu of the accepted candidate (0 if none)
    double M = 0.0;
    double res_value = 0.0;  ///< res_x of the rescaled direction
    std::size_t solver_calls = 0;
};

using OuterTraceSink = std::function<void(const OuterTraceRecord&)>;

struct OptimizeOptions {
    bool verify = false;
    unsigned threads = 1;
    /// Accept a step after each nu level instead of pooling the whole scan.
    bool per_nu_update = false;
    std::size_t max_outer = 0; ///< 0 selects the default iteration cap
    double budget_multiplier = 200.0;
    LewisOptions lewis;
    OuterTraceSink trace;
};

enum class StopReason {
    GapBelowEps,      ///< h - B < eps at the start
    SmallImprovement, ///< accepted decrease below eps / (8 C R)
    NoCandidate,      ///< every guess certified dual and the Newton decrement is below eps
    NoImprovement,    ///< candidates exist but none decreases h
    Stationary,       ///< feasible gradient vanishes
    IterationCap,
};

inline const char* to_string(StopReason s) noexcept
{
    switch (s) {
    case StopReason::GapBelowEps:      return "gap_below_eps";
    case StopReason::SmallImprovement: return "small_improvement";
    case StopReason::NoCandidate:      return "no_candidate";
    case StopReason::NoImprovement:    return "no_improvement";
    case StopReason::Stationary:       return "stationary";
    case StopReason::IterationCap:     return "iteration_cap";
    }
    return "?";
}

struct OptimizeResult {
    Vector x;
    double h = 0.0;
    std::size_t outer_iterations = 0;
    std::size_t residual_calls = 0;
    std::size_t solver_calls = 0;
    StopReason stop = StopReason::IterationCap;
    ResidualRegime regime = ResidualRegime::Overdetermined;
    std::vector<double> history; ///< h at x0 and after every outer iteration
    IterationCounts counts;
    InvariantStats invariants;   ///< residual-solver and outer-loop checks
    std::optional<LewisOverestimate> lewis;
};

/// ceil(40 e^2 20 C R log((h0 - B)/eps)), at least 1 when the gap exceeds eps.
inline std::size_t default_outer_cap(double C, double R, double gap, double eps)
{
    if (gap <= eps)
        return 0;
    const double e2 = std::numbers::e * std::numbers::e;
    const double T = std::ceil(40.0 * e2 * 20.0 * C * R * std::log(gap / eps));
    return static_cast<std::size_t>(std::max(1.0, T));
}

namespace detail {

/// Runs job(i) for i in [0, count) on up to `threads` workers; the first
/// exception raised by any job is rethrown.
template <class Job>
void parallel_for(std::size_t count, unsigned threads, Job&& job)
{
    const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < count; i = next++) {
                try {
                    job(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    pool.clear();
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

struct Guess {
    double nu;
    double M;
};

struct Candidate {
    double nu = 0.0;
    double M = 0.0;
    Vector step;
    double h = 0.0;
    double res_value = 0.0;
};

} // namespace detail

/// (nu, M) pairs of one scan: nu halves from h - B while nu >= eps, and for
/// each nu, M halves from e^2 nu while M >= nu / (C R).
inline std::vector<detail::Guess> guess_schedule(double gap, double eps, double C, double R)
{
    std::vector<detail::Guess> out;
    const double e2 = std::numbers::e * std::numbers::e;
    for (double nu = gap; nu >= eps; nu /= 2.0)
        for (double M = e2 * nu; M >= nu / (C * R); M /= 2.0)
            out.push_back({nu, M});
    return out;
}

template <QscLoss Loss>
OptimizeResult optimize(const QscProblem<Loss>& prob, const OptimizeOptions& opts = {})
{
    validate(prob);
    const ProblemMatrix& mat = prob.mat;
    const double C = prob.loss.qsc_constant();
    const double R = prob.diameter;
    const double e2 = std::numbers::e * std::numbers::e;

    OptimizeResult out;
    out.x = prob.x0;
    out.regime = residual_regime(mat);
    out.h = objective(prob, out.x);
    out.history.push_back(out.h);

    const double gap0 = out.h - prob.lower_bound;
    const std::size_t cap =
        opts.max_outer ? opts.max_outer : default_outer_cap(C, R, gap0, prob.eps);
    if (gap0 < prob.eps) {
        out.stop = StopReason::GapBelowEps;
        return out;
    }
    if (out.regime == ResidualRegime::Overdetermined)
        out.lewis = approx_lewis(mat, opts.lewis);

    const ResidualOptions ropts{opts.verify, opts.budget_multiplier};
    const double min_gain = prob.eps / (8.0 * C * R);

    // One scan over the given guesses at the current iterate. Residual
    // solves depend only on M, so repeated M values share one solve.
    bool stalled = false;
    auto scan = [&](const LocalModel& model, const std::vector<detail::Guess>& guesses,
                    std::size_t& calls) -> std::optional<detail::Candidate> {
        stalled = false;
        std::vector<double> ms;
        std::map<double, std::size_t> slot;
        for (const auto& gs : guesses)
            if (slot.emplace(gs.M, ms.size()).second)
                ms.push_back(gs.M);

        std::vector<ResidualOutcome> results(ms.size());
        std::vector<double> trial_h(ms.size(), 0.0);
        std::vector<Vector> steps(ms.size());
        try {
            detail::parallel_for(ms.size(), opts.threads, [&](std::size_t i) {
                results[i] = out.regime == ResidualRegime::Overdetermined
                    ? residual_solver(prob, model, ms[i], *out.lewis, ropts)
                    : residual_solver_underdetermined(prob, model, ms[i], ropts);
                if (results[i].tag == OutcomeTag::Primal) {
                    steps[i] = results[i].delta / (11.0 * e2);
                    trial_h[i] = objective(prob, out.x - steps[i]);
                }
            });
        } catch (const Error& e) {
            // The feasible gradient is numerically zero under the solver's weights.
            if (e.kind() != ErrorKind::InfeasibleConstraint && e.kind() != ErrorKind::SingularSystem)
                throw;
            stalled = true;
            return std::nullopt;
        }

        for (const auto& res : results) {
            out.counts.merge(res.counts);
            out.invariants.merge(res.invariants);
            out.solver_calls += res.counts.solver_calls + res.verification_solves;
            calls += res.counts.solver_calls + res.verification_solves;
        }
        out.residual_calls += results.size();

        std::optional<detail::Candidate> best;
        for (const auto& gs : guesses) {
            const std::size_t i = slot.at(gs.M);
            if (results[i].tag != OutcomeTag::Primal || !std::isfinite(trial_h[i]))
                continue;
            if (!best || trial_h[i] < best->h) {
                best = detail::Candidate{gs.nu, gs.M, steps[i], trial_h[i], 0.0};
                best->res_value = residual_value(mat, model, results[i].delta / 11.0);
            }
        }
        return best;
    };

    auto verify_step = [&](const Vector& step, double h_old, double h_new) {
        if (!opts.verify)
            return;
        const double width = (mat.A() * step).cwiseAbs().maxCoeff();
        out.invariants.record(width <= (1.0 + 1e-9) / C, (1.0 / C - width) * C);
        out.invariants.record(h_new <= h_old, (h_old - h_new) / std::max(1.0, std::abs(h_old)));
        if (mat.constrained()) {
            const double err = (mat.N() * out.x - mat.v()).cwiseAbs().maxCoeff();
            out.invariants.record(err <= 1e-8, 1e-8 - err);
        }
    };

    for (std::size_t t = 0; t < cap; ++t) {
        const LocalModel model = gradient_pieces(prob, out.x);
        const double lambda_sq = newton_decrement_sq(mat, model);
        if (lambda_sq <= 0.0 || model.grad_h.norm() == 0.0) {
            out.stop = StopReason::Stationary;
            return out;
        }
        const double gap = out.h - prob.lower_bound;
        if (gap < prob.eps) {
            out.stop = StopReason::GapBelowEps;
            return out;
        }

        OuterTraceRecord rec;
        rec.t = t + 1;
        const double h_before = out.h;
        bool accepted = false;

        if (!opts.per_nu_update) {
            const auto best = scan(model, guess_schedule(gap, prob.eps, C, R), rec.solver_calls);
            if (stalled) {
                out.stop = StopReason::Stationary;
                return out;
            }
            if (best && best->h < out.h) {
                out.x -= best->step;
                out.h = best->h;
                rec.nu = best->nu;
                rec.M = best->M;
                rec.res_value = best->res_value;
                verify_step(best->step, h_before, out.h);
                accepted = true;
            } else if (!best && lambda_sq / 2.0 > prob.eps) {
                fail(ErrorKind::NoProgress,
                     "every guess was certified dual while the Newton decrement exceeds eps");
            }
            if (!best) {
                ++out.outer_iterations;
                out.history.push_back(out.h);
                out.stop = StopReason::NoCandidate;
                if (opts.trace) {
                    rec.h = out.h;
                    opts.trace(rec);
                }
                return out;
            }
        } else {
            bool any = false;
            LocalModel local = model;
            for (double nu = gap; nu >= prob.eps; nu /= 2.0) {
                std::vector<detail::Guess> level;
                for (double M = e2 * nu; M >= nu / (C * R); M /= 2.0)
                    level.push_back({nu, M});
                const auto best = scan(local, level, rec.solver_calls);
                if (stalled)
                    break;
                if (!best)
                    continue;
                any = true;
                if (best->h < out.h) {
                    const double h_old = out.h;
                    out.x -= best->step;
                    out.h = best->h;
                    rec.nu = best->nu;
                    rec.M = best->M;
                    rec.res_value = best->res_value;
                    verify_step(best->step, h_old, out.h);
                    accepted = true;
                    local = gradient_pieces(prob, out.x);
                    if (newton_decrement_sq(mat, local) <= 0.0)
                        break;
                }
            }
            if (stalled && !accepted) {
                out.stop = StopReason::Stationary;
                return out;
            }
            if (!any) {
                if (lambda_sq / 2.0 > prob.eps)
                    fail(ErrorKind::NoProgress,
                         "every guess was certified dual while the Newton decrement exceeds eps");
                ++out.outer_iterations;
                out.history.push_back(out.h);
                out.stop = StopReason::NoCandidate;
                return out;
            }
        }

        ++out.outer_iterations;
        out.history.push_back(out.h);
        if (opts.trace) {
            rec.h = out.h;
            opts.trace(rec);
        }
        if (!accepted) {
            out.stop = StopReason::NoImprovement;
            return out;
        }
        if (h_before - out.h <= min_gain) {
            out.stop = StopReason::SmallImprovement;
            return out;
        }
    }
    out.stop = StopReason::IterationCap;
    return out;
}

struct NewtonOptions {
    std::size_t max_iter = 500;
    double armijo = 1e-4;
    double grad_tol = 1e-12;
    int max_halvings = 60;
};

struct NewtonResult {
    Vector x;
    double h = 0.0;
    std::size_t iterations = 0; ///< accepted steps
    std::vector<double> history;
};

/// Feasible-direction gradient: grad projected onto ker N.
inline Vector projected_gradient(const ProblemMatrix& mat, const Vector& grad)
{
    if (!mat.constrained())
        return grad;
    const Matrix& N = mat.N();
    const Vector coef = (N * N.transpose()).completeOrthogonalDecomposition().solve(N * grad);
    return grad - N.transpose() * coef;
}

/// Damped Newton with Armijo backtracking; steps stay in ker N.
template <QscLoss Loss>
NewtonResult newton_baseline(const QscProblem<Loss>& prob, const NewtonOptions& opts = {})
{
    validate(prob);
    const ProblemMatrix& mat = prob.mat;
    NewtonResult out;
    out.x = prob.x0;
    out.h = objective(prob, out.x);
    out.history.push_back(out.h);

    for (std::size_t it = 0; it < opts.max_iter; ++it) {
        const LocalModel model = gradient_pieces(prob, out.x);
        if (projected_gradient(mat, model.grad_h).norm() < opts.grad_tol)
            break;
        if (!(model.hess_f.maxCoeff() > 0.0))
            fail(ErrorKind::SingularHessian, "loss has no curvature at the current iterate");
        const WeightedGram Q(mat, model.hess_f);
        const Vector dir = Q.apply(model.grad_h);
        if (Q.used_pseudo_inverse() && !mat.constrained()
            && (Q.gram() * dir - model.grad_h).norm() > 1e-6 * model.grad_h.norm())
            fail(ErrorKind::SingularHessian, "gradient lies outside the range of the Hessian");
        const double dec = model.grad_h.dot(dir);
        if (!(dec > 0.0))
            fail(ErrorKind::SingularHessian, "Newton direction is not a descent direction");

        double alpha = 1.0;
        double trial = objective(prob, out.x - dir);
        int halvings = 0;
        while (!(trial <= out.h - opts.armijo * alpha * dec) && halvings < opts.max_halvings) {
            alpha /= 2.0;
            trial = objective(prob, out.x - alpha * dir);
            ++halvings;
        }
        if (!(trial < out.h))
            break;
        const double drop = out.h - trial;
        out.x -= alpha * dir;
        out.h = trial;
        out.history.push_back(out.h);
        ++out.iterations;
        if (drop < prob.eps)
            break;
    }
    return out;
}

} // namespace qsc
