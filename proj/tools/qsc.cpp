// Command-line front end.
//
//   qsc linf  --input F --eps E [--rhs-last]
//   qsc qsc   --input F --p P --mu MU --eps E [--R r --B b]
//   qsc lewis --input F [--exact]
//   qsc bench --rows N --cols D --seed S --p P --mu MU --eps E
//
// Exit status: 0 when the solve met its contract, 1 when it finished without
// meeting it, 2 on usage errors, 3 on a library error, 4 on anything else.
// Failures still produce report.json with "status": "error" and an
// "error_class" field.

#include <qsc/bench.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <thread>

namespace {

enum Exit : int { kOk = 0, kContract = 1, kUsage = 2, kLibrary = 3, kInternal = 4 };

unsigned thread_cap()
{
    unsigned cap = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("QSC_SOLVE_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1)
                cap = static_cast<unsigned>(v);
        } catch (const std::exception&) {
            std::cerr << "ignoring malformed QSC_SOLVE_THREADS='" << env << "'\n";
        }
    }
    return cap;
}

int report_failure(const qsc::RunConfig& cfg, std::string_view cls, std::string_view msg, int code)
{
    const auto rep = qsc::error_report(cfg, cls, msg);
    std::cerr << rep.dump() << '\n';
    try {
        qsc::write_file_atomic(cfg.report, rep.dump(2) + "\n");
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
    }
    return code;
}

void add_outputs(CLI::App* sub, qsc::RunConfig& cfg, bool& no_trace)
{
    sub->add_option("--report", cfg.report, "JSON report path")->capture_default_str();
    sub->add_option("--trace", cfg.trace_path, "CSV trace path")->capture_default_str();
    sub->add_flag("--no-trace", no_trace, "skip the CSV trace");
    sub->add_flag("--verify-invariants", cfg.verify, "check solver invariants at runtime");
    sub->add_option("--seed", cfg.seed, "seed for every random choice")->capture_default_str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"IRLS solvers for l-inf regression and QSC minimization"};
    app.require_subcommand(1);
    qsc::RunConfig cfg;
    bool no_trace = false;

    auto positive = CLI::PositiveNumber;

    auto* linf = app.add_subcommand("linf", "l-inf regression, min ||Ax - b||_inf or min ||Ax||_inf over x_d = 1");
    linf->add_option("--input", cfg.input, "csv or Matrix Market file")->required()->check(CLI::ExistingFile);
    linf->add_option("--eps", cfg.eps, "relative accuracy")->required()->check(positive);
    linf->add_flag("--rhs-last", cfg.rhs_last, "treat the last column as b");
    add_outputs(linf, cfg, no_trace);

    auto* qscc = app.add_subcommand("qsc", "minimize sum_i |(Ax - b)_i|^p + mu (Ax - b)_i^2; last column is b");
    qscc->add_option("--input", cfg.input, "csv or Matrix Market file")->required()->check(CLI::ExistingFile);
    qscc->add_option("--p", cfg.p, "exponent, at least 3")->required();
    qscc->add_option("--mu", cfg.mu, "quadratic weight")->required()->check(positive);
    qscc->add_option("--eps", cfg.eps, "additive accuracy")->required()->check(positive);
    qscc->add_option("--R", cfg.R, "l-inf diameter bound (default: 4 ||A x0 - b||_inf)")->check(positive);
    qscc->add_option("--B", cfg.B, "lower bound on the objective")->capture_default_str();
    qscc->add_option("--constraints", cfg.constraints, "csv of [N | v] for N x = v")->check(CLI::ExistingFile);
    add_outputs(qscc, cfg, no_trace);

    auto* lewis = app.add_subcommand("lewis", "Lewis weight overestimates");
    lewis->add_option("--input", cfg.input, "csv or Matrix Market file")->required()->check(CLI::ExistingFile);
    lewis->add_flag("--exact", cfg.exact, "exact leverage scores instead of sketches");
    lewis->add_flag("--rhs-last", cfg.rhs_last, "drop the last column before computing weights");
    lewis->add_option("--constraints", cfg.constraints, "csv of [N | v]")->check(CLI::ExistingFile);
    add_outputs(lewis, cfg, no_trace);

    auto* bench = app.add_subcommand("bench", "random instance, ours against damped Newton");
    bench->add_option("--rows", cfg.rows, "rows")->required()->check(CLI::PositiveNumber);
    bench->add_option("--cols", cfg.cols, "columns")->required()->check(CLI::PositiveNumber);
    bench->add_option("--p", cfg.p, "exponent, at least 3")->required();
    bench->add_option("--mu", cfg.mu, "quadratic weight")->required()->check(positive);
    bench->add_option("--eps", cfg.eps, "additive accuracy")->required()->check(positive);
    bench->add_option("--R", cfg.R, "l-inf diameter bound")->check(positive);
    bench->add_option("--B", cfg.B, "lower bound on the objective")->capture_default_str();
    add_outputs(bench, cfg, no_trace);
    // --seed is required for bench; add_outputs registered it as optional.
    bench->get_option("--seed")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        if (!app.get_subcommands().empty())
            cfg.command = app.get_subcommands().front()->get_name();
        return report_failure(cfg, "UsageError", e.what(), kUsage);
    }

    cfg.command = app.get_subcommands().front()->get_name();
    cfg.trace = !no_trace;
    cfg.threads = thread_cap();

    try {
        const qsc::RunOutput out = qsc::run_command(cfg);
        if (!out.contract_met) {
            auto rep = out.report;
            rep["status"] = "error";
            rep["error_class"] = "ContractNotMet";
            qsc::write_outputs(cfg, {rep, out.trace_csv, false});
            std::cerr << R"({"error_class":"ContractNotMet"})" << '\n';
            return kContract;
        }
        qsc::write_outputs(cfg, out);
        std::cout << "objective " << qsc::format_double(out.report.value("objective", 0.0));
        if (out.report.contains("certificate"))
            std::cout << " certificate " << out.report["certificate"].get<std::string>();
        if (out.report.contains("gap"))
            std::cout << " gap " << qsc::format_double(out.report["gap"].get<double>());
        if (out.report.contains("mass"))
            std::cout << " mass " << qsc::format_double(out.report["mass"].get<double>());
        std::cout << '\n';
        return kOk;
    } catch (const qsc::Error& e) {
        return report_failure(cfg, qsc::to_string(e.kind()), e.what(), kLibrary);
    } catch (const std::exception& e) {
        return report_failure(cfg, "InternalError", e.what(), kInternal);
    }
}
