// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "support.hpp"

#include <qsc/io.hpp>
#include <qsc/lewis.hpp>
#include <qsc/linf.hpp>
#include <qsc/loss.hpp>
#include <qsc/optimizer.hpp>
#include <qsc/residual.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace qsc;
using namespace testing_support;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

struct Line {
    int id;
    std::string title;
    Verdict verdict;
    double seconds;
};

/// Invariant tallies from every verified solve in this run.
InvariantStats g_invariants;

struct LinfRun {
    Index d = 0; ///< homogenized dimension
    Index n = 0;
    double oracle = 0.0;
    LinfResult result;
    double value = 0.0;
};
std::vector<LinfRun> g_linf_runs;

template <class Fn>
Line run(int id, const std::string& title, Fn&& fn)
{
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
        v = fn();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {id, title, v, secs};
}

std::string fmt(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

unsigned threads()
{
    return std::max(1u, std::thread::hardware_concurrency());
}

// 1: l-inf regression against a brute-force grid.
Verdict linf_oracle_equivalence()
{
    const double eps = 0.05;
    const auto start = std::chrono::steady_clock::now();
    int ok = 0;
    double worst = -INFINITY;
    for (int k = 0; k < 25; ++k) {
        std::mt19937_64 rng(1000 + k);
        const Index d = k % 2 ? 3 : 2;
        const Matrix X = uniform_matrix(40, d, rng);
        const Vector b = uniform_vector(40, rng);
        const Vector ls = X.colPivHouseholderQr().solve(b);
        const GridOptimum oracle = linf_grid_oracle(X, b, ls, 5.0, 0.1, 2);

        LinfOptions opts;
        opts.verify = true;
        const LinfFitResult fit = linf_fit(X, b, eps, opts);
        g_invariants.merge(fit.detail.invariants);
        g_linf_runs.push_back({d + 1, 40, oracle.value, fit.detail, fit.value});

        const double bound = (1.0 + eps) * oracle.value + 2.0 * oracle.resolution;
        worst = std::max(worst, fit.value - bound);
        ok += fit.value <= bound;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {ok == 25 && secs < 60.0, std::to_string(ok) +
                                         "/25 instances within (1+eps)*grid + 2*res; worst excess " +
                                         fmt(worst)};
}

// 2: energy invariants across every verified solve of this run.
Verdict energy_invariants()
{
    return {g_invariants.checks > 0 && g_invariants.clean(),
            std::to_string(g_invariants.checks) + " checks, " +
                std::to_string(g_invariants.violations) + " violations, worst slack " +
                fmt(g_invariants.worst_slack)};
}

// 3: every dual ratio is a lower bound on the squared optimum.
Verdict dual_soundness()
{
    std::size_t duals = 0, bad = 0;
    double worst = 0.0;
    for (const auto& r : g_linf_runs)
        for (const auto& call : r.result.calls) {
            if (call.tag != OutcomeTag::Dual)
                continue;
            ++duals;
            const double rel = call.ratio / (r.oracle * r.oracle);
            worst = std::max(worst, rel);
            bad += rel > 1.0 + 1e-6;
        }
    return {duals > 0 && bad == 0, std::to_string(duals) + " dual outcomes, max ratio/oracle^2 " +
                                       fmt(worst)};
}

// 4: high-width and total linear-solve budgets at the requested accuracy.
Verdict iteration_budgets()
{
    const double eps = 0.05;
    std::size_t bad = 0;
    double worst_hi = 0.0, worst_total = 0.0;
    for (const auto& r : g_linf_runs) {
        const double hi_bound = 6.0 * std::cbrt(static_cast<double>(r.d)) / eps;
        const double total_bound = subsolver_solve_budget(r.n, r.d, eps);
        for (const auto& call : r.result.calls) {
            worst_hi = std::max(worst_hi, call.counts.high_width / hi_bound);
            bad += static_cast<double>(call.counts.high_width) > hi_bound;
        }
        const double total = static_cast<double>(r.result.counts.solver_calls);
        worst_total = std::max(worst_total, total / total_bound);
        bad += total > total_bound;
    }
    return {bad == 0, "max high-width/bound " + fmt(worst_hi) + ", max solves/budget " +
                          fmt(worst_total)};
}

// 5: Lewis overestimates on random matrices.
Verdict lewis_overestimates()
{
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<int> rows(40, 200), cols(2, 10);
    int ok = 0;
    double worst_margin = INFINITY;
    for (int k = 0; k < 50; ++k) {
        const Index n = rows(rng), d = cols(rng);
        const Matrix A = uniform_matrix(n, d, rng);
        const LewisOverestimate lw = approx_lewis(A, 0, kDefaultSketchRows, true);
        const OverestimateCheck chk = verify_overestimate(A, lw.w);
        worst_margin = std::min(worst_margin, chk.worst_margin);
        ok += chk.ok && lw.mass >= d && lw.mass <= 2.0 * d;
    }
    return {ok == 50, std::to_string(ok) + "/50 pass, min w - sigma " + fmt(worst_margin)};
}

/// max res over {|A D|_inf <= 1/C} for d = 2: grid over the bounding box of
/// the polygon with two refinements, cross-checked with exact edge maximization.
double residual_opt(const Matrix& A, const LocalModel& m, double C)
{
    const double bound = 1.0 / C;
    double lo[2] = {INFINITY, INFINITY}, hi[2] = {-INFINITY, -INFINITY};
    for (Index i = 0; i < A.rows(); ++i)
        for (Index j = i + 1; j < A.rows(); ++j)
            for (double si : {-1.0, 1.0})
                for (double sj : {-1.0, 1.0}) {
                    Matrix M(2, 2);
                    M << A.row(i), A.row(j);
                    if (std::abs(M.determinant()) < 1e-12)
                        continue;
                    Vector rhs(2);
                    rhs << si * bound, sj * bound;
                    const Vector v = M.partialPivLu().solve(rhs);
                    if ((A * v).cwiseAbs().maxCoeff() > bound * (1.0 + 1e-9))
                        continue;
                    for (int k = 0; k < 2; ++k) {
                        lo[k] = std::min(lo[k], v[k]);
                        hi[k] = std::max(hi[k], v[k]);
                    }
                }
    const Vector c = A.transpose() * m.grad_f;
    const Matrix H = A.transpose() * m.hess_f.asDiagonal() * A / std::numbers::e;
    auto value = [&](const Vector& D) { return c.dot(D) - D.dot(H * D); };

    double best = 0.0;
    Vector arg = Vector::Zero(2);
    double step[2] = {(hi[0] - lo[0]) / 400.0, (hi[1] - lo[1]) / 400.0};
    double origin[2] = {lo[0], lo[1]};
    int per_axis = 401;
    for (int pass = 0; pass < 3; ++pass) {
        for (int i = 0; i < per_axis; ++i)
            for (int j = 0; j < per_axis; ++j) {
                Vector D(2);
                D << origin[0] + i * step[0], origin[1] + j * step[1];
                if ((A * D).cwiseAbs().maxCoeff() > bound)
                    continue;
                const double v = value(D);
                if (v > best) {
                    best = v;
                    arg = D;
                }
            }
        for (int k = 0; k < 2; ++k) {
            origin[k] = arg[k] - 2.0 * step[k];
            step[k] /= 10.0;
        }
        per_axis = 41;
    }
    return std::max(best, polygon_quadratic_max(A, bound, c, H));
}

// 6: rescaled primal of the residual solver achieves a twentieth of OPT.
Verdict residual_guarantee()
{
    int ok = 0;
    double worst = INFINITY;
    std::string note;
    for (int k = 0; k < 10; ++k) {
        std::mt19937_64 rng(600 + k);
        const Matrix A = uniform_matrix(20, 2, rng);
        const Vector b = uniform_vector(20, rng, 0.0, 1.0);
        QscProblem<LpL2Loss> prob{ProblemMatrix(A), b, LpL2Loss(4, 1), uniform_vector(2, rng, -0.5, 0.5),
                                  0.0, 1.0, 1e-8};
        prob.diameter = heuristic_diameter(prob);
        const double C = prob.loss.qsc_constant();
        const LocalModel m = gradient_pieces(prob, prob.x0);
        const double opt = residual_opt(A, m, C);

        std::optional<double> M;
        for (const auto& gs : guess_schedule(m.h - prob.lower_bound, prob.eps, C, prob.diameter))
            if (opt > gs.M / 2.0 && opt <= gs.M) {
                M = gs.M;
                break;
            }
        if (!M) {
            note = "; instance " + std::to_string(k) + " has no bracketing guess";
            continue;
        }
        const LewisOverestimate lw = approx_lewis(prob.mat);
        const ResidualOutcome out = residual_solver(prob, m, *M, lw, {.verify = true});
        g_invariants.merge(out.invariants);
        if (out.tag != OutcomeTag::Primal) {
            note = "; instance " + std::to_string(k) + " returned dual";
            continue;
        }
        const Vector hat = out.delta / 11.0;
        const double res = residual_value(prob.mat, m, hat);
        const double width = (A * hat).cwiseAbs().maxCoeff();
        worst = std::min(worst, res / opt);
        ok += res >= opt / 20.0 - 1e-6 && width <= (1.0 + 1e-12) / C;
    }
    return {ok == 10, std::to_string(ok) + "/10 satisfy res >= OPT/20; min res/OPT " + fmt(worst) + note};
}

/// |h_ours - h_ref| <= 1e-6 (1 + |h_ref|).
bool gap_ok(double ours, double ref)
{
    return std::abs(ours - ref) <= 1e-6 * (1.0 + std::abs(ref));
}

bool monotone(const std::vector<double>& h)
{
    for (std::size_t k = 1; k < h.size(); ++k)
        if (h[k] > h[k - 1])
            return false;
    return true;
}

// 7: end-to-end against damped Newton.
Verdict end_to_end()
{
    const Instance inst = generate_instance(1000, 20, 7);
    QscProblem<LpL2Loss> prob{ProblemMatrix(inst.A), inst.b, LpL2Loss(8, 1), Vector::Zero(20),
                              0.0, 1.0, 1e-10};
    prob.diameter = heuristic_diameter(prob);
    OptimizeOptions opts;
    opts.verify = true;
    opts.threads = threads();
    const auto start = std::chrono::steady_clock::now();
    const OptimizeResult ours = optimize(prob, opts);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    g_invariants.merge(ours.invariants);
    const NewtonResult ref = newton_baseline(prob);
    const double gap = ours.h - ref.h;
    const bool pass = gap_ok(ours.h, ref.h) && secs < 120.0 && monotone(ours.history);
    return {pass, "h " + fmt(ours.h) + ", gap " + fmt(gap) + ", " +
                      std::to_string(ours.outer_iterations) + " outer iterations, " + fmt(secs) + " s"};
}

// 8: affine constraints against an explicit null-space basis.
Verdict affine_constraints()
{
    int ok = 0;
    double worst_feas = 0.0, worst_rel = 0.0;
    for (int k = 0; k < 10; ++k) {
        std::mt19937_64 rng(800 + k);
        const Instance inst = generate_instance(60, 6, 800 + k);
        const Matrix N = gaussian_matrix(2, 6, rng);
        const Vector v = gaussian_matrix(2, 1, rng).col(0);
        const Vector x0 = feasible_point(N, v);
        QscProblem<LpL2Loss> prob{ProblemMatrix(inst.A, N, v), inst.b, LpL2Loss(4, 1), x0,
                                  0.0, 1.0, 1e-10};
        prob.diameter = heuristic_diameter(prob);
        const OptimizeResult ours = optimize(prob, {.verify = true, .threads = threads()});
        g_invariants.merge(ours.invariants);
        const double ref = reduced_newton(inst.A, inst.b, prob.loss, x0, null_space_basis(N));
        const double feas = (N * ours.x - v).cwiseAbs().maxCoeff();
        const double rel = std::abs(ours.h - ref) / std::abs(ref);
        worst_feas = std::max(worst_feas, feas);
        worst_rel = std::max(worst_rel, rel);
        ok += feas <= 1e-8 && rel <= 1e-6;
    }
    return {ok == 10, std::to_string(ok) + "/10; max infeasibility " + fmt(worst_feas) +
                          ", max relative objective gap " + fmt(worst_rel)};
}

// 9: underdetermined regime against Newton on the row space.
Verdict underdetermined()
{
    int ok = 0;
    double worst = 0.0;
    std::string note;
    for (int k = 0; k < 10; ++k) {
        std::mt19937_64 rng(900 + k);
        const Matrix A = uniform_matrix(8, 20, rng, 0.0, 1.0);
        const Vector b = uniform_vector(8, rng, 0.0, 1.0);
        QscProblem<LpL2Loss> prob{ProblemMatrix(A), b, LpL2Loss(8, 1), Vector::Zero(20), 0.0, 1.0,
                                  1e-10};
        prob.diameter = heuristic_diameter(prob);
        const OptimizeResult ours = optimize(prob, {.verify = true, .threads = threads()});
        g_invariants.merge(ours.invariants);
        const double ref = reduced_newton(A, b, prob.loss, prob.x0, row_space_basis(A));
        const double gap = std::abs(ours.h - ref) / (1.0 + std::abs(ref));
        worst = std::max(worst, gap);
        const bool regime = ours.regime == ResidualRegime::Underdetermined;
        if (!regime)
            note = "; wrong regime selected";
        ok += regime && monotone(ours.history) && gap_ok(ours.h, ref);
    }
    return {ok == 10, std::to_string(ok) + "/10 monotone and within gap; max gap/(1+|h|) " +
                          fmt(worst) + note};
}

// 10: analytic derivatives against central differences.
Verdict gradient_checks()
{
    struct Named {
        std::string name;
        QscFunction f;
    };
    const std::vector<Named> losses = {
        {"lp8", lp_l2_loss(8, 1)},     {"lp4", lp_l2_loss(4, 1)},
        {"lp3", lp_l2_loss(3, 0.5)},   {"lp6", lp_l2_loss(6, 2)},
        {"quadratic", QscFunction(QuadraticLoss(1.0))},
    };
    std::size_t checks = 0, bad = 0;
    double worst = 0.0;
    for (const auto& [name, f] : losses) {
        std::mt19937_64 rng(std::hash<std::string>{}(name));
        const Matrix A = uniform_matrix(30, 4, rng, 0.0, 1.0);
        const Vector b = uniform_vector(30, rng, 0.0, 1.0);
        const QscProblem<QscFunction> prob{ProblemMatrix(A), b, f, Vector::Zero(4), 0.0, 1.0, 1e-8};
        for (int k = 0; k < 20; ++k) {
            const Vector x = uniform_vector(4, rng, -1.0, 1.0);
            const LocalModel m = gradient_pieces(prob, x);
            Vector fd(4);
            for (Index j = 0; j < 4; ++j) {
                const double h = 1e-6 * (1.0 + std::abs(x[j]));
                Vector xp = x, xm = x;
                xp[j] += h;
                xm[j] -= h;
                fd[j] = (objective(prob, xp) - objective(prob, xm)) / (2.0 * h);
            }
            const double grad_rel = (fd - m.grad_h).norm() / m.grad_h.norm();
            ++checks;
            bad += grad_rel > 1e-5;
            worst = std::max(worst, grad_rel);

            double hess_rel = 0.0;
            for (Index i = 0; i < m.residual.size(); ++i) {
                const double t = m.residual[i];
                const double h = 1e-6 * (1.0 + std::abs(t));
                const double fd2 = (f.first(t + h) - f.first(t - h)) / (2.0 * h);
                hess_rel = std::max(hess_rel, std::abs(fd2 - m.hess_f[i]) / std::abs(m.hess_f[i]));
            }
            ++checks;
            bad += hess_rel > 1e-5;
            worst = std::max(worst, hess_rel);
        }
    }
    return {bad == 0, std::to_string(checks) + " checks over 5 losses, max relative error " + fmt(worst)};
}

} // namespace

int main()
{
    std::vector<Line> lines;
    lines.push_back(run(1, "l-inf oracle equivalence", linf_oracle_equivalence));
    lines.push_back(run(3, "dual certificate soundness", dual_soundness));
    lines.push_back(run(4, "high-width and solve budgets", iteration_budgets));
    lines.push_back(run(5, "Lewis overestimates", lewis_overestimates));
    lines.push_back(run(6, "residual 1/20 guarantee", residual_guarantee));
    lines.push_back(run(7, "QSC end-to-end vs Newton", end_to_end));
    lines.push_back(run(8, "affine constraints", affine_constraints));
    lines.push_back(run(9, "underdetermined regime", underdetermined));
    lines.push_back(run(10, "gradient checks", gradient_checks));
    lines.push_back(run(2, "energy invariants", energy_invariants));
    std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });

    bool all = true;
    for (const auto& l : lines) {
        std::printf("%s C%-2d %-30s %s (%.2f s)\n", l.verdict.pass ? "PASS" : "FAIL", l.id,
                    l.title.c_str(), l.verdict.detail.c_str(), l.seconds);
        all = all && l.verdict.pass;
    }
    std::printf("%s\n", all ? "all criteria passed" : "some criteria failed");
    return all ? 0 : 1;
}
