#include "carm/simulation.hpp"

#include <gtest/gtest.h>

namespace carm {
namespace {

class SimulationTest : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        scenario_ = new StudyScenario(load_scenario(std::filesystem::path(CARM_FIXTURE_DIR) / "study_scenario.json"));
        log_ = new RunLog(simulate_study(*scenario_, default_config(), OperatorModel{}, 7));
    }
    static void TearDownTestSuite()
    {
        delete log_;
        delete scenario_;
    }
    static StudyScenario* scenario_;
    static RunLog* log_;
};

StudyScenario* SimulationTest::scenario_ = nullptr;
RunLog* SimulationTest::log_ = nullptr;

TEST_F(SimulationTest, SameSeedSameLog)
{
    const RunLog again = simulate_study(*scenario_, default_config(), OperatorModel{}, 7);
    EXPECT_EQ(to_json_lines(again), to_json_lines(*log_));
    const RunLog other = simulate_study(*scenario_, default_config(), OperatorModel{}, 8);
    EXPECT_NE(to_json_lines(other), to_json_lines(*log_));
}

TEST_F(SimulationTest, LogIsChronologicalAndComplete)
{
    double last = 0.0;
    std::size_t finals = 0;
    for (const auto& e : log_->events) {
        EXPECT_GE(e.t, last);
        last = e.t;
        finals += e.kind == LogEvent::Kind::Final ? 1 : 0;
    }
    // Every view of every run, both arms, excluded run included.
    EXPECT_EQ(finals, 16u);
}

TEST_F(SimulationTest, ProposedArmNeedsNoRepositioningShots)
{
    const StudyReport report = run_study(*scenario_, *log_);
    const ArmSummary& proposed = report.arms.at(Arm::Proposed);
    const ArmSummary& conventional = report.arms.at(Arm::Conventional);
    EXPECT_EQ(proposed.views, 6u);
    EXPECT_EQ(proposed.total_xrays, 0);
    EXPECT_EQ(conventional.views, 6u);
    EXPECT_GE(conventional.total_xrays, 6);
    int sum = 0;
    for (const auto& v : report.views) {
        if (v.arm == Arm::Proposed) {
            EXPECT_EQ(v.xray_count, 0);
            EXPECT_TRUE(v.final_px);
            EXPECT_FALSE(v.first_try_px);
        } else {
            EXPECT_GE(v.xray_count, 1);
            EXPECT_LE(v.xray_count, OperatorModel{}.max_shots);
            sum += v.xray_count;
        }
    }
    EXPECT_EQ(sum, conventional.total_xrays);
    EXPECT_DOUBLE_EQ(conventional.xrays_per_view, sum / 6.0);
}

TEST_F(SimulationTest, ConventionalShotsStopOnceCloseEnough)
{
    const StudyReport report = run_study(*scenario_, *log_);
    const OperatorModel m;
    for (const auto& v : report.views) {
        if (v.arm != Arm::Conventional || v.xray_count == m.max_shots) continue;
        ASSERT_TRUE(v.final_px);
        EXPECT_LE(*v.final_px, m.accept_px) << v.view << " run " << v.run;
    }
}

TEST(Simulation, PerfectOperatorHitsTargets)
{
    OperatorModel m;
    m.initial_error_mm = m.initial_error_deg = 0.0;
    m.overlay_error_mm = m.overlay_error_deg = 0.0;
    const StudyScenario scenario = load_scenario(std::filesystem::path(CARM_FIXTURE_DIR) / "study_scenario.json");
    const StudyReport report = run_study(scenario, simulate_study(scenario, default_config(), m, 1));
    for (const auto& v : report.views) {
        EXPECT_LT(v.error.distance_mm, 1e-9);
        if (v.arm == Arm::Conventional) {
            EXPECT_EQ(v.xray_count, 1);
        }
    }
}

TEST(OperatorModelJson, RoundTripAndValidation)
{
    OperatorModel m;
    m.max_shots = 3;
    EXPECT_EQ(to_json(operator_model_from_json(to_json(m))), to_json(m));
    EXPECT_THROW(operator_model_from_json({{"patience", 3}}), InvalidArgumentError);
    EXPECT_THROW(operator_model_from_json({{"correction_gain", 0.0}}), InvalidArgumentError);
    EXPECT_THROW(operator_model_from_json({{"max_shots", 0}}), InvalidArgumentError);
}

}  // namespace
}  // namespace carm
