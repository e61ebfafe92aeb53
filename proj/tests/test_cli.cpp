// Runs the built eopulse binary and checks exit codes and the output override.

#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code{-1};
    std::string output;
};

Outcome run_cli(const std::string& args, const std::string& env = "")
{
    const std::string cmd = env + (env.empty() ? "" : " ") + "\"" EOPULSE_CLI "\" " + args + " 2>&1";
    Outcome out;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return out;
    std::array<char, 512> buf{};
    while (fgets(buf.data(), buf.size(), pipe)) out.output += buf.data();
    const int status = pclose(pipe);
    out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return out;
}

fs::path write_config(const std::string& name, const std::string& text)
{
    const fs::path p = fs::path(::testing::TempDir()) / name;
    std::ofstream(p) << text;
    return p;
}

} // namespace

TEST(Cli, ListsEveryExperiment)
{
    const auto r = run_cli("list-experiments");
    EXPECT_EQ(r.code, 0);
    for (const char* name : {"Wavepacket", "SchmidtModes", "CoincidenceVsTau", "CountsVsBeta", "ChshSweep",
                             "ChshWithHeating", "HeatingCompare", "HeatingFit"})
        EXPECT_NE(r.output.find(name), std::string::npos) << name;
}

TEST(Cli, UsageErrorsExitWithOne)
{
    EXPECT_EQ(run_cli("").code, 1);
    EXPECT_EQ(run_cli("frobnicate").code, 1);
    EXPECT_EQ(run_cli("run").code, 1);
    EXPECT_EQ(run_cli("--help").code, 0);
}

TEST(Cli, BundledConfigsValidate)
{
    for (const auto& entry : fs::directory_iterator(fs::path(EOPULSE_SOURCE_DIR) / "configs")) {
        if (entry.path().extension() != ".yaml") continue;
        const auto r = run_cli("validate \"" + entry.path().string() + "\"");
        EXPECT_EQ(r.code, 0) << entry.path() << "\n" << r.output;
    }
}

TEST(Cli, InvalidConfigListsProblemsAndExitsWithOne)
{
    const auto path = write_config("bad.yaml", "experiment: ChshSweep\nbogus: 1\npump: {gain_factor: 1}\n");
    const auto v = run_cli("validate \"" + path.string() + "\"");
    EXPECT_EQ(v.code, 1);
    EXPECT_NE(v.output.find("bogus"), std::string::npos);
    EXPECT_NE(v.output.find("missing t0_ns"), std::string::npos);
    EXPECT_EQ(run_cli("run \"" + path.string() + "\"").code, 1);
    EXPECT_EQ(run_cli("validate /nonexistent.yaml").code, 1);
}

TEST(Cli, RuntimeFailureExitsWithTwo)
{
    const auto path = write_config("missing_data.yaml", "experiment: HeatingFit\nheating_fit: {data_csv: nowhere.csv}\n");
    const auto dir = fs::path(::testing::TempDir()) / "cli_runtime";
    const auto r = run_cli("run \"" + path.string() + "\"", "EOPULSE_OUTPUT_DIR=\"" + dir.string() + "\"");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("HeatingFit"), std::string::npos);
}

TEST(Cli, EnvironmentOverridesOutputDirectory)
{
    const auto path = write_config("compare.yaml", "experiment: HeatingCompare\noutput_dir: never_here\n");
    const auto dir = fs::path(::testing::TempDir()) / "cli_override";
    fs::remove_all(dir);
    const auto r = run_cli("run \"" + path.string() + "\"", "EOPULSE_OUTPUT_DIR=\"" + dir.string() + "\"");
    EXPECT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(dir / "manifest.json"));
    EXPECT_TRUE(fs::exists(dir / "match_sigma.csv"));
    EXPECT_FALSE(fs::exists(fs::path(::testing::TempDir()) / "never_here"));
}
