#include "carm/io.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

namespace {

struct Result {
    int status = -1;
    std::string out;
};

Result run(const std::string& args)
{
    const std::string cmd = std::string(CARM_CLI) + " --log-level off " + args + " 2>/dev/null";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    std::array<char, 4096> buf;
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

const std::string kFixtures = CARM_FIXTURE_DIR;
const std::string kScenario = kFixtures + "/study_scenario.json";

std::filesystem::path temp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

TEST(Cli, SimulateIsByteStable)
{
    const Result a = run("simulate --scenario " + kScenario + " --headless --seed 5");
    const Result b = run("simulate --scenario " + kScenario + " --headless --seed 5");
    ASSERT_EQ(a.status, 0);
    EXPECT_FALSE(a.out.empty());
    EXPECT_EQ(a.out, b.out);
    const Result c = run("simulate --scenario " + kScenario + " --headless --seed 6");
    EXPECT_NE(a.out, c.out);
}

TEST(Cli, SimulateNeedsHeadless)
{
    EXPECT_EQ(run("simulate --scenario " + kScenario).status, 1);
}

TEST(Cli, EvalOnFixture)
{
    const auto csv = temp("carm_cli_eval.csv");
    const Result r = run("eval --log " + kFixtures + "/study_log.jsonl --scenario " + kScenario + " --out " + csv.string());
    ASSERT_EQ(r.status, 0);
    const nlohmann::json s = nlohmann::json::parse(r.out);
    EXPECT_EQ(s.at("arms").at("conventional").at("total_xrays"), 16);
    EXPECT_EQ(s.at("arms").at("proposed").at("total_xrays"), 0);
    const std::string text = carm::read_text_file(csv);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 13);
    std::filesystem::remove(csv);
}

TEST(Cli, SimulateThenEval)
{
    const auto log = temp("carm_cli_sim.jsonl");
    const auto csv = temp("carm_cli_sim.csv");
    ASSERT_EQ(run("simulate --scenario " + kScenario + " --headless --seed 2 --log-out " + log.string()).status, 0);
    const Result r = run("eval --log " + log.string() + " --scenario " + kScenario + " --out " + csv.string());
    ASSERT_EQ(r.status, 0);
    EXPECT_EQ(nlohmann::json::parse(r.out).at("arms").at("proposed").at("total_xrays"), 0);
    std::filesystem::remove(log);
    std::filesystem::remove(csv);
}

TEST(Cli, ReplayWritesReport)
{
    const auto log = temp("carm_cli_cmds.jsonl");
    std::ofstream(log) << R"({"verb":"set_dofs","args":{"preset":"inlet"}})" "\n"
                       << R"({"verb":"save_view","args":{"name":"inlet"}})" "\n"
                       << R"({"verb":"adjust_dof","args":{"dof":"base_y","delta":5}})" "\n"
                       << R"({"verb":"acquire_xray","args":{"view":"inlet"}})" "\n";
    const Result r = run("replay --log " + log.string());
    ASSERT_EQ(r.status, 0);
    EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "view,xray_count,dist_mm,angle_deg,final_px");
    EXPECT_NE(r.out.find("inlet,1,5.0000,0.0000,"), std::string::npos) << r.out;

    std::ofstream(log, std::ios::app) << "{oops\n";
    EXPECT_EQ(run("replay --log " + log.string()).status, 1);
    std::filesystem::remove(log);
}

TEST(Cli, UsageErrors)
{
    EXPECT_NE(run("").status, 0);
    EXPECT_NE(run("eval --log x.jsonl").status, 0);
    EXPECT_EQ(run("eval --log /nonexistent.jsonl --scenario " + kScenario + " --out /tmp/x.csv").status, 1);
}

}  // namespace
