#include "bench_support.hpp"

#include <qsc/io.hpp>

#include <nlohmann/json.hpp>

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

using namespace qsc;
using namespace testing_support;

namespace {

int run_cli(const std::string& args, const ScratchDir& dir, const std::string& env = "")
{
    const std::string cmd = "cd '" + dir.path().string() + "' && " + env + " '" QSC_CLI_PATH "' " +
                            args + " > stdout.txt 2> stderr.txt";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

nlohmann::json report(const ScratchDir& dir)
{
    return nlohmann::json::parse(slurp(dir / "report.json"));
}

void write_instance(const ScratchDir& dir, const std::string& name, Index rows, Index cols,
                    std::uint64_t seed)
{
    const Instance inst = generate_instance(rows, cols, seed);
    Matrix M(rows, cols + 1);
    M << inst.A, inst.b;
    write_matrix(dir / name, M);
}

} // namespace

TEST(Cli, BenchWritesReportAndTrace)
{
    ScratchDir dir;
    ASSERT_EQ(run_cli("bench --rows 120 --cols 6 --seed 2 --p 8 --mu 1 --eps 1e-10", dir), 0);
    const auto rep = report(dir);
    EXPECT_EQ(rep["schema"], 1);
    EXPECT_EQ(rep["status"], "ok");
    EXPECT_NE(slurp(dir / "stdout.txt").find("gap"), std::string::npos);
    EXPECT_GT(parse_rectangular_csv(slurp(dir / "trace.csv")).size(), 2u);
}

TEST(Cli, LinfPrintsValueAndCertificate)
{
    ScratchDir dir;
    write_instance(dir, "data.csv", 40, 2, 4);
    ASSERT_EQ(run_cli("linf --input data.csv --eps 0.05 --rhs-last --verify-invariants", dir), 0);
    const std::string out = slurp(dir / "stdout.txt");
    EXPECT_NE(out.find("objective"), std::string::npos);
    EXPECT_NE(out.find("certificate"), std::string::npos);
    EXPECT_GT(report(dir)["invariants"]["checks"].get<int>(), 0);
}

TEST(Cli, QscAndLewisCommands)
{
    ScratchDir dir;
    write_instance(dir, "data.csv", 60, 3, 5);
    EXPECT_EQ(run_cli("qsc --input data.csv --p 4 --mu 1 --eps 1e-9 --R 10 --B 0", dir), 0);
    EXPECT_EQ(report(dir)["command"], "qsc");
    EXPECT_EQ(run_cli("lewis --input data.csv --exact --rhs-last", dir), 0);
    EXPECT_EQ(report(dir)["dimension"], 3);
}

TEST(Cli, ThreadEnvironmentVariableIsAccepted)
{
    ScratchDir dir;
    EXPECT_EQ(run_cli("bench --rows 80 --cols 4 --seed 2 --p 8 --mu 1 --eps 1e-8 --no-trace", dir,
                      "QSC_SOLVE_THREADS=2"),
              0);
    EXPECT_FALSE(std::filesystem::exists(dir / "trace.csv"));
}

TEST(Cli, ParseErrorIsMachineReadable)
{
    ScratchDir dir;
    std::ofstream(dir / "bad.csv") << "1,2\n3,oops\n";
    EXPECT_EQ(run_cli("linf --input bad.csv --eps 0.1", dir), 3);
    const auto rep = report(dir);
    EXPECT_EQ(rep["status"], "error");
    EXPECT_EQ(rep["error_class"], "ParseError");
    EXPECT_NE(rep["message"].get<std::string>().find("line 2"), std::string::npos);
}

TEST(Cli, InvalidLossParameterIsLibraryError)
{
    ScratchDir dir;
    EXPECT_EQ(run_cli("bench --rows 20 --cols 2 --seed 1 --p 2 --mu 1 --eps 1e-6", dir), 3);
    EXPECT_EQ(report(dir)["error_class"], "InvalidArgument");
}

TEST(Cli, UsageErrors)
{
    ScratchDir dir;
    EXPECT_EQ(run_cli("bench --rows 20 --cols 2 --p 8 --mu 1 --eps 1e-6", dir), 2);
    EXPECT_EQ(report(dir)["error_class"], "UsageError");
    EXPECT_EQ(run_cli("frobnicate", dir), 2);
}

TEST(Cli, TinyDiameterReportsNoProgress)
{
    ScratchDir dir;
    write_instance(dir, "data.csv", 30, 3, 6);
    EXPECT_EQ(run_cli("qsc --input data.csv --p 4 --mu 1 --eps 1e-8 --R 1e-4", dir), 3);
    EXPECT_EQ(report(dir)["error_class"], "NoProgress");
}
