#pragma once

// Residual problems of the trust-region scheme and their IRLS solvers.
//
// Around an iterate x the local model is
//
//     res_x(D) = grad_f(x)^T (A D) - (1/e) (A D)^T diag(f''(Ax - b)) (A D),
//
// to be approximately maximized over ||A D||_inf <= 1/C. For a guess M of the
// optimal value, the solvers below either return D with grad_f^T A D = M,
// ||A D||_inf <= 11/C and a controlled quadratic term, or certify that
//
//     min_{g^T D = -1} <s,(AD)^2> + (M C^2 / 2) ||A D||_inf^2 >= 13 M,
//
// where g = -(1/M) A^T grad_f and s = f''(Ax - b).

#include <qsc/diagnostics.hpp>
#include <qsc/error.hpp>
#include <qsc/lewis.hpp>
#include <qsc/linalg.hpp>
#include <qsc/loss.hpp>

#include <cmath>
#include <numbers>
#include <optional>

namespace qsc {

/// min_{N x = v} sum_i f((A x - b)_i) together with the data the solvers assume.
template <QscLoss Loss>
struct QscProblem {
    ProblemMatrix mat;
    Vector b;
    Loss loss;
    Vector x0;
    double lower_bound = 0.0; ///< B with h >= B everywhere
    double diameter = 1.0;    ///< R bounding ||A x - A x*||_inf on the initial level set
    double eps = 1e-8;        ///< additive target accuracy
};

template <QscLoss Loss>
double objective(const QscProblem<Loss>& prob, const Vector& x)
{
    const Vector resid = prob.mat.A() * x - prob.b;
    double h = 0.0;
    for (Index i = 0; i < resid.size(); ++i)
        h += prob.loss.value(resid[i]);
    return h;
}

/// Gradient and diagonal Hessian of the separable loss at an iterate.
struct LocalModel {
    Vector residual; ///< A x - b
    Vector grad_f;   ///< f'(A x - b)
    Vector hess_f;   ///< f''(A x - b)
    Vector grad_h;   ///< A^T grad_f
    double h = 0.0;
};

template <QscLoss Loss>
LocalModel gradient_pieces(const QscProblem<Loss>& prob, const Vector& x)
{
    require(x.size() == prob.mat.cols(), ErrorKind::DimensionMismatch,
            "iterate length must equal the number of columns");
    require(all_finite(x), ErrorKind::NonFinite, "iterate has non-finite entries");
    LocalModel m;
    m.residual = prob.mat.A() * x - prob.b;
    const Index n = m.residual.size();
    m.grad_f.resize(n);
    m.hess_f.resize(n);
    for (Index i = 0; i < n; ++i) {
        const double t = m.residual[i];
        m.grad_f[i] = prob.loss.first(t);
        m.hess_f[i] = prob.loss.second(t);
        m.h += prob.loss.value(t);
    }
    m.grad_h = prob.mat.A().transpose() * m.grad_f;
    require(all_finite(m.grad_f) && all_finite(m.hess_f) && std::isfinite(m.h),
            ErrorKind::NonFinite, "loss evaluation produced non-finite values");
    return m;
}

template <QscLoss Loss>
void validate(const QscProblem<Loss>& prob)
{
    const auto& mat = prob.mat;
    require(prob.b.size() == mat.rows(), ErrorKind::DimensionMismatch,
            "b must have one entry per row");
    require(prob.x0.size() == mat.cols(), ErrorKind::DimensionMismatch,
            "x0 must have one entry per column");
    require(all_finite(prob.b) && all_finite(prob.x0), ErrorKind::NonFinite,
            "problem data has non-finite entries");
    require(prob.diameter > 0.0, ErrorKind::InvalidArgument, "diameter R must be positive");
    require(prob.eps > 0.0, ErrorKind::InvalidArgument, "eps must be positive");
    require(prob.loss.qsc_constant() > 0.0, ErrorKind::InvalidArgument,
            "QSC constant must be positive");
    if (mat.constrained()) {
        const double err = (mat.N() * prob.x0 - mat.v()).cwiseAbs().maxCoeff();
        require(err <= 1e-9 * (1.0 + mat.v().cwiseAbs().maxCoeff()), ErrorKind::InvalidArgument,
                "x0 violates N x0 = v");
    }
    require(prob.lower_bound <= objective(prob, prob.x0), ErrorKind::InvalidArgument,
            "lower bound B exceeds h(x0)");
}

/// Minimum-norm solution of N x = v.
inline Vector feasible_point(const Matrix& N, const Vector& v)
{
    return N.completeOrthogonalDecomposition().solve(v);
}

/// Labelled heuristic: four times the initial l-inf residual (1 if that vanishes).
template <QscLoss Loss>
double heuristic_diameter(const QscProblem<Loss>& prob)
{
    const double r = (prob.mat.A() * prob.x0 - prob.b).cwiseAbs().maxCoeff();
    return r > 0.0 ? 4.0 * r : 1.0;
}

/// res_x(delta) = grad_f^T (A delta) - (1/e) <f'', (A delta)^2>.
inline double residual_value(const ProblemMatrix& mat, const LocalModel& model, const Vector& delta)
{
    const Vector Ad = mat.A() * delta;
    return model.grad_f.dot(Ad) - model.hess_f.dot(Ad.cwiseAbs2()) / std::numbers::e;
}

template <QscLoss Loss>
double residual_value(const QscProblem<Loss>& prob, const Vector& x, const Vector& delta)
{
    return residual_value(prob.mat, gradient_pieces(prob, x), delta);
}

/// Newton decrement squared, grad_h^T (A^T diag(f'') A)^+ grad_h restricted to ker N.
inline double newton_decrement_sq(const ProblemMatrix& mat, const LocalModel& model)
{
    const WeightedGram Q(mat, model.hess_f);
    return std::max(0.0, model.grad_h.dot(Q.apply(model.grad_h)));
}

struct ResidualOptions {
    bool verify = false;
    double budget_multiplier = 200.0;
};

struct ResidualOutcome {
    OutcomeTag tag = OutcomeTag::Dual;
    Vector delta;        ///< Primal: g^T delta = -1, ||A delta||_inf <= 11/C
    ResistanceVector r;  ///< Dual certificate
    double certified = 0.0; ///< <s + (M C^2/2) r/||r||_1, (A delta_r)^2> (Dual only)
    double width = 0.0;     ///< ||A delta||_inf (Primal only)
    IterationCounts counts;
    InvariantStats invariants;
    std::size_t verification_solves = 0;
};

enum class ResidualRegime { Overdetermined, Underdetermined };

namespace detail {

struct ResidualSetup {
    Vector r0;
    double cap = 0.0;       ///< loop runs while ||r||_1 <= cap
    double s_scale = 0.0;   ///< p = s_scale * s + (M C^2 / 2) r
    double high_width = 0.0;
    bool high_width_branch = true;
    double budget = 0.0;
};

inline ResidualOutcome run_residual(const ProblemMatrix& mat, const LocalModel& model, double C,
                                    double M, const ResidualSetup& setup,
                                    const ResidualOptions& opts)
{
    require(M > 0.0 && std::isfinite(M), ErrorKind::InvalidArgument, "guess M must be positive");
    const Matrix& A = mat.A();
    const Index n = A.rows();
    const Index d = A.cols();
    const Vector g = -model.grad_h / M;
    const Vector& s = model.hess_f;
    const double quad = 0.5 * M * C * C;
    const double primal_width = 11.0 / C;
    const double update_floor = 100.0 / (C * C);

    Vector r = setup.r0;
    Vector running = Vector::Zero(d);
    std::size_t low_count = 0;

    ResidualOutcome out;
    std::optional<double> prev_energy;
    double prev_mass = 0.0;

    auto check_step = [&](double e, double mass) {
        if (!opts.verify || !prev_energy)
            return;
        const double need = 26.0 * M * (mass - prev_mass) * (1.0 - 1e-8);
        const double slack = (e - *prev_energy) - need;
        out.invariants.record(slack >= 0.0, slack / std::max(std::abs(e), 1e-300));
    };

    while (r.sum() <= setup.cap) {
        if (static_cast<double>(out.counts.solver_calls) >= setup.budget)
            fail(ErrorKind::SolverBudgetExceeded, "residual solver exceeded its linear-solve budget");
        const Vector p = setup.s_scale * s + quad * r;
        const EnergySolve sol = minimize_energy(mat, p, g);
        ++out.counts.solver_calls;
        ++out.counts.total;
        const double mass = r.sum();
        check_step(sol.energy, mass);

        const Vector Ad = A * sol.x;
        const Vector Ad2 = Ad.cwiseAbs2();
        const double width = Ad.cwiseAbs().maxCoeff();
        const double test = s.dot(Ad2) + quad * r.dot(Ad2) / mass;
        if (test >= 13.0 * M) {
            out.tag = OutcomeTag::Dual;
            out.r = ResistanceVector(r);
            out.certified = test;
            if (opts.verify)
                out.invariants.record(true, (test - 13.0 * M) / (13.0 * M));
            return out;
        }
        if (width <= primal_width) {
            out.tag = OutcomeTag::Primal;
            out.delta = sol.x;
            out.width = width;
            return out;
        }

        prev_energy = sol.energy;
        prev_mass = mass;

        if (setup.high_width_branch && width > setup.high_width) {
            ++out.counts.high_width;
            r[detail::first_argmax_abs(Ad)] += 1.0;
        } else {
            ++out.counts.low_width;
            if (width <= setup.high_width) {
                ++low_count;
                running += sol.x;
                const Vector avg = running / static_cast<double>(low_count);
                const double avg_width = (A * avg).cwiseAbs().maxCoeff();
                if (avg_width <= primal_width) {
                    out.tag = OutcomeTag::Primal;
                    out.delta = avg;
                    out.width = avg_width;
                    return out;
                }
            }
            for (Index j = 0; j < n; ++j)
                if (Ad2[j] >= update_floor)
                    r[j] *= Ad2[j] * C * C / 52.0;
        }
    }

    out.tag = OutcomeTag::Dual;
    out.r = ResistanceVector(r);
    const double mass = r.sum();
    const Vector p = setup.s_scale * s + quad * r;
    const EnergySolve sol = minimize_energy(mat, p, g);
    ++out.verification_solves;
    const Vector Ad2 = (A * sol.x).cwiseAbs2();
    out.certified = s.dot(Ad2) + quad * r.dot(Ad2) / mass;
    if (opts.verify) {
        check_step(sol.energy, mass);
        const double slack = out.certified - 13.0 * M * (1.0 - 1e-8);
        out.invariants.record(slack >= 0.0, slack / (13.0 * M));
    }
    return out;
}

} // namespace detail

/// Overdetermined residual solver seeded with Lewis weight overestimates.
template <QscLoss Loss>
ResidualOutcome residual_solver(const QscProblem<Loss>& prob, const LocalModel& model, double M,
                                const LewisOverestimate& lewis, const ResidualOptions& opts = {})
{
    const Index n = prob.mat.rows();
    require(lewis.w.size() == n, ErrorKind::DimensionMismatch,
            "Lewis weights must have one entry per row");
    const double C = prob.loss.qsc_constant();
    const double dim = static_cast<double>(prob.mat.effective_dim());
    detail::ResidualSetup setup;
    setup.r0 = lewis.w.array() + dim / static_cast<double>(n);
    setup.cap = 2.0 * (lewis.mass + dim);
    setup.s_scale = 2.0 * (lewis.mass + dim);
    setup.high_width = 11.0 * std::cbrt(dim) / C;
    setup.high_width_branch = true;
    setup.budget = opts.budget_multiplier * std::cbrt(dim)
        * std::max(1.0, std::log(static_cast<double>(n)));
    return detail::run_residual(prob.mat, model, C, M, setup, opts);
}

/// Uniformly initialized residual solver for n <= d; low-width updates only.
template <QscLoss Loss>
ResidualOutcome residual_solver_underdetermined(const QscProblem<Loss>& prob,
                                                const LocalModel& model, double M,
                                                const ResidualOptions& opts = {})
{
    const Index n = prob.mat.rows();
    const double nn = static_cast<double>(n);
    const double C = prob.loss.qsc_constant();
    detail::ResidualSetup setup;
    setup.r0 = Vector::Ones(n);
    setup.cap = 2.0 * nn;
    setup.s_scale = 2.0 * nn;
    setup.high_width = 11.0 * std::cbrt(nn) / C;
    setup.high_width_branch = false;
    setup.budget = opts.budget_multiplier * std::cbrt(nn) * std::max(1.0, std::log(nn));
    return detail::run_residual(prob.mat, model, C, M, setup, opts);
}

/// Algorithm selection: Lewis-seeded solver unless there are fewer rows than
/// feasible directions.
inline ResidualRegime residual_regime(const ProblemMatrix& mat)
{
    return mat.rows() < mat.effective_dim() ? ResidualRegime::Underdetermined
                                            : ResidualRegime::Overdetermined;
}

} // namespace qsc
