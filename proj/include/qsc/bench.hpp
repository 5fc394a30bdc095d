#pragma once

// Command runners behind the command-line tool: each builds a JSON report and
// a CSV trace in memory; `write_outputs` commits them atomically.

#include <qsc/error.hpp>
#include <qsc/io.hpp>
#include <qsc/lewis.hpp>
#include <qsc/linf.hpp>
#include <qsc/loss.hpp>
#include <qsc/optimizer.hpp>
#include <qsc/residual.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace qsc {

inline constexpr int kReportSchema = 1;

struct RunConfig {
    std::string command;
    std::filesystem::path input;
    std::optional<std::filesystem::path> constraints; ///< csv of [N | v]
    bool rhs_last = false;
    bool exact = false;
    Index rows = 0, cols = 0;
    std::uint64_t seed = 0;
    double p = 8.0, mu = 1.0;
    double eps = 1e-8;
    std::optional<double> R;
    double B = 0.0;
    std::filesystem::path report = "report.json";
    std::filesystem::path trace_path = "trace.csv";
    bool trace = true;
    bool verify = false;
    unsigned threads = 1;
};

struct RunOutput {
    nlohmann::json report;
    std::string trace_csv;
    bool contract_met = true;
};

/// Rectangular CSV accumulator.
class CsvTable {
public:
    explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

    template <class... Ts>
    void row(const Ts&... cells)
    {
        static_assert(sizeof...(Ts) > 0);
        std::vector<std::string> r{cell(cells)...};
        require(r.size() == header_.size(), ErrorKind::DimensionMismatch,
                "trace row width differs from its header");
        rows_.push_back(std::move(r));
    }

    std::string str() const
    {
        std::string s = join(header_);
        for (const auto& r : rows_)
            s += join(r);
        return s;
    }

    std::size_t size() const noexcept { return rows_.size(); }

private:
    static std::string cell(double v) { return format_double(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    template <class I>
        requires std::is_integral_v<I>
    static std::string cell(I v)
    {
        return std::to_string(v);
    }

    static std::string join(const std::vector<std::string>& cells)
    {
        std::string s;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i)
                s += ',';
            s += cells[i];
        }
        return s + '\n';
    }

    std::vector<std::string> header_;
    std::vector<std::vector<std::string>> rows_;
};

namespace detail {

inline nlohmann::json to_json(const IterationCounts& c)
{
    return {{"total", c.total},
            {"high_width", c.high_width},
            {"low_width", c.low_width},
            {"solver_calls", c.solver_calls}};
}

inline nlohmann::json to_json(const InvariantStats& s)
{
    nlohmann::json j = {{"checks", s.checks}, {"violations", s.violations}};
    j["worst_slack"] = s.checks ? nlohmann::json(s.worst_slack) : nlohmann::json(nullptr);
    return j;
}

inline nlohmann::json to_json(const Vector& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline nlohmann::json header(const RunConfig& cfg)
{
    return {{"schema", kReportSchema}, {"command", cfg.command}, {"status", "ok"}};
}

class Stopwatch {
public:
    double seconds() const
    {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline ProblemMatrix problem_matrix(const RunConfig& cfg, Matrix A)
{
    if (!cfg.constraints)
        return ProblemMatrix(std::move(A));
    const LoadedMatrix nv = load_matrix(*cfg.constraints, MatrixFormat::Csv, true);
    return ProblemMatrix(std::move(A), nv.A, *nv.rhs);
}

inline nlohmann::json optimize_summary(const OptimizeResult& r, double seconds)
{
    nlohmann::json j;
    j["objective"] = r.h;
    j["wall_seconds"] = seconds;
    j["outer_iterations"] = r.outer_iterations;
    j["residual_calls"] = r.residual_calls;
    j["linear_solves"] = r.solver_calls;
    j["iterations"] = to_json(r.counts);
    j["invariants"] = to_json(r.invariants);
    j["stop"] = to_string(r.stop);
    j["regime"] = r.regime == ResidualRegime::Overdetermined ? "overdetermined" : "underdetermined";
    return j;
}

} // namespace detail

inline RunOutput run_linf(const RunConfig& cfg)
{
    const detail::Stopwatch clock;
    const LoadedMatrix data = load_matrix(cfg.input, MatrixFormat::Auto, cfg.rhs_last);
    CsvTable trace({"call", "M", "t", "mass", "energy", "width", "case"});
    LinfOptions opts;
    opts.verify = cfg.verify;
    opts.lewis.seed = cfg.seed;
    if (cfg.trace)
        opts.trace = [&](const LinfTraceRecord& r) {
            trace.row(r.call, r.M, r.t, r.mass, r.energy, r.width, to_string(r.kind));
        };

    RunOutput out;
    out.report = detail::header(cfg);
    LinfResult res;
    Vector x;
    double value = 0.0;
    if (data.rhs) {
        LinfFitResult fit = linf_fit(data.A, *data.rhs, cfg.eps, opts);
        x = fit.x;
        value = fit.value;
        res = std::move(fit.detail);
    } else {
        Vector g = Vector::Zero(data.A.cols());
        g[g.size() - 1] = -1.0;
        res = linf_regress(data.A, g, cfg.eps, opts);
        x = res.x;
        value = res.value;
    }
    auto& rep = out.report;
    rep["objective"] = value;
    rep["x"] = detail::to_json(x);
    rep["eps"] = res.eps;
    rep["lower_bound"] = res.lower_bound;
    rep["certificate"] = res.calls.empty() ? "initial"
        : to_string(res.calls.back().tag);
    rep["binary_steps"] = res.binary_steps;
    rep["linear_solves"] = res.counts.solver_calls;
    rep["iterations"] = detail::to_json(res.counts);
    rep["invariants"] = detail::to_json(res.invariants);
    rep["wall_seconds"] = clock.seconds();
    out.contract_met = !cfg.verify || res.invariants.clean();
    out.trace_csv = trace.str();
    return out;
}

template <QscLoss Loss>
QscProblem<Loss> make_problem(const RunConfig& cfg, ProblemMatrix mat, Vector b, Loss loss)
{
    Vector x0 = mat.constrained() ? feasible_point(mat.N(), mat.v())
                                  : Vector::Zero(mat.cols()).eval();
    QscProblem<Loss> prob{std::move(mat), std::move(b), std::move(loss), std::move(x0),
                          cfg.B, 1.0, cfg.eps};
    prob.diameter = cfg.R ? *cfg.R : heuristic_diameter(prob);
    return prob;
}

inline OptimizeOptions optimize_options(const RunConfig& cfg, std::vector<OuterTraceRecord>& recs)
{
    OptimizeOptions opts;
    opts.verify = cfg.verify;
    opts.threads = cfg.threads;
    opts.lewis.seed = cfg.seed;
    opts.trace = [&recs](const OuterTraceRecord& r) { recs.push_back(r); };
    return opts;
}

inline RunOutput run_qsc(const RunConfig& cfg)
{
    const detail::Stopwatch clock;
    LoadedMatrix data = load_matrix(cfg.input, MatrixFormat::Auto, true);
    auto prob = make_problem(cfg, detail::problem_matrix(cfg, std::move(data.A)),
                             std::move(*data.rhs), LpL2Loss(cfg.p, cfg.mu));
    std::vector<OuterTraceRecord> recs;
    const OptimizeResult res = optimize(prob, optimize_options(cfg, recs));

    RunOutput out;
    out.report = detail::header(cfg);
    out.report.update(detail::optimize_summary(res, clock.seconds()));
    out.report["x"] = detail::to_json(res.x);
    out.report["R"] = prob.diameter;
    out.report["B"] = prob.lower_bound;
    out.report["qsc_constant"] = prob.loss.qsc_constant();
    out.contract_met = res.stop != StopReason::IterationCap && res.invariants.clean();
    CsvTable table({"t", "h", "nu", "M", "res_value", "solver_calls"});
    for (const auto& r : recs)
        table.row(r.t, r.h, r.nu, r.M, r.res_value, r.solver_calls);
    out.trace_csv = cfg.trace ? table.str() : std::string();
    return out;
}

inline RunOutput run_lewis(const RunConfig& cfg)
{
    const detail::Stopwatch clock;
    LoadedMatrix data = load_matrix(cfg.input, MatrixFormat::Auto, cfg.rhs_last);
    const ProblemMatrix mat = detail::problem_matrix(cfg, std::move(data.A));
    LewisOptions opts;
    opts.mode = cfg.exact ? LewisMode::Exact : LewisMode::Auto;
    opts.seed = cfg.seed;
    const LewisOverestimate lw = approx_lewis(mat, opts);
    const OverestimateCheck chk = verify_overestimate(mat, lw.w);
    const Vector sigma = leverage_scores_exact(mat, lw.w);
    const double dim = static_cast<double>(mat.effective_dim());

    RunOutput out;
    auto& rep = out.report = detail::header(cfg);
    rep["w"] = detail::to_json(lw.w);
    rep["mass"] = lw.mass;
    rep["dimension"] = mat.effective_dim();
    rep["exact"] = lw.exact;
    rep["attempts"] = lw.attempts;
    rep["rescaled"] = lw.rescaled;
    rep["overestimate_ok"] = chk.ok;
    rep["worst_margin"] = chk.worst_margin;
    rep["wall_seconds"] = clock.seconds();
    out.contract_met = chk.ok && lw.mass >= dim * (1.0 - 1e-12) && lw.mass <= 2.0 * dim * (1.0 + 1e-12);
    CsvTable table({"row", "w", "leverage"});
    for (Index i = 0; i < lw.w.size(); ++i)
        table.row(i, lw.w[i], sigma[i]);
    out.trace_csv = cfg.trace ? table.str() : std::string();
    return out;
}

/// Gap tolerance used to judge a bench run against the Newton baseline.
inline double bench_gap_tolerance(double h_newton)
{
    return 1e-6 * (1.0 + std::abs(h_newton));
}

inline RunOutput run_bench(const RunConfig& cfg)
{
    const Instance inst = generate_instance(cfg.rows, cfg.cols, cfg.seed);
    auto prob = make_problem(cfg, ProblemMatrix(inst.A), inst.b, LpL2Loss(cfg.p, cfg.mu));

    std::vector<OuterTraceRecord> recs;
    const detail::Stopwatch ours_clock;
    const OptimizeResult ours = optimize(prob, optimize_options(cfg, recs));
    const double ours_seconds = ours_clock.seconds();

    const detail::Stopwatch newton_clock;
    const NewtonResult newton = newton_baseline(prob);
    const double newton_seconds = newton_clock.seconds();

    const double gap = ours.h - newton.h;
    RunOutput out;
    auto& rep = out.report = detail::header(cfg);
    rep["instance"] = {{"rows", cfg.rows}, {"cols", cfg.cols}, {"seed", cfg.seed},
                       {"p", cfg.p}, {"mu", cfg.mu}, {"eps", cfg.eps}};
    rep["R"] = prob.diameter;
    rep["ours"] = detail::optimize_summary(ours, ours_seconds);
    rep["newton"] = {{"objective", newton.h},
                     {"iterations", newton.iterations},
                     {"wall_seconds", newton_seconds}};
    rep["objective"] = ours.h;
    rep["gap"] = gap;
    rep["gap_tolerance"] = bench_gap_tolerance(newton.h);
    out.contract_met = std::abs(gap) <= bench_gap_tolerance(newton.h) && ours.invariants.clean();

    CsvTable table({"method", "t", "h", "nu", "M", "res_value", "solver_calls"});
    table.row("ours", std::size_t{0}, ours.history.front(), 0.0, 0.0, 0.0, std::size_t{0});
    for (const auto& r : recs)
        table.row("ours", r.t, r.h, r.nu, r.M, r.res_value, r.solver_calls);
    for (std::size_t k = 0; k < newton.history.size(); ++k)
        table.row("newton", k, newton.history[k], 0.0, 0.0, 0.0, std::size_t{0});
    out.trace_csv = cfg.trace ? table.str() : std::string();
    return out;
}

inline RunOutput run_command(const RunConfig& cfg)
{
    if (cfg.command == "linf")
        return run_linf(cfg);
    if (cfg.command == "qsc")
        return run_qsc(cfg);
    if (cfg.command == "lewis")
        return run_lewis(cfg);
    if (cfg.command == "bench")
        return run_bench(cfg);
    fail(ErrorKind::InvalidArgument, "unknown command '" + cfg.command + "'");
}

/// Report for a failed run; `error_class` is the library error kind or
/// "ContractNotMet".
inline nlohmann::json error_report(const RunConfig& cfg, std::string_view error_class,
                                   std::string_view message)
{
    nlohmann::json j = detail::header(cfg);
    j["status"] = "error";
    j["error_class"] = error_class;
    j["message"] = message;
    return j;
}

inline void write_outputs(const RunConfig& cfg, const RunOutput& out)
{
    write_file_atomic(cfg.report, out.report.dump(2) + "\n");
    if (cfg.trace && !out.trace_csv.empty())
        write_file_atomic(cfg.trace_path, out.trace_csv);
}

} // namespace qsc
