#include "carm/hmd_tracker.hpp"
#include "carm/io.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace carm {
namespace {

using Vec6 = Eigen::Matrix<double, 6, 1>;

// Landmarks scattered in a box in front of a camera at `pose`.
std::vector<Landmark> landmarks_in_view(std::mt19937_64& rng, const RigidTransform& pose, int n)
{
    std::uniform_real_distribution<double> xy(-0.35, 0.35);
    std::uniform_real_distribution<double> z(800.0, 3000.0);
    std::vector<Landmark> out;
    for (int i = 0; i < n; ++i) {
        const double d = z(rng);
        out.push_back({"L" + std::to_string(i), pose.apply(Vec3(xy(rng) * d, xy(rng) * d, d))});
    }
    return out;
}

TEST(ProjectFeature, OpticalAxisAndPinholeOracle)
{
    const CameraIntrinsics k;
    const auto c = project_feature(RigidTransform::identity(), {"a", Vec3(0, 0, 1000)}, k);
    EXPECT_EQ(c, Eigen::Vector2d(160, 144));
    const auto off = project_feature(RigidTransform::identity(), {"b", Vec3(100, 0, 1000)}, k);
    EXPECT_DOUBLE_EQ(off.x(), 196.0);
    EXPECT_DOUBLE_EQ(off.y(), 144.0);
    EXPECT_THROW(project_feature(RigidTransform::identity(), {"c", Vec3(0, 0, -5)}, k), BehindCameraError);
}

TEST(SolvePose, AlreadyOptimalGuess)
{
    std::mt19937_64 rng(1);
    const CameraIntrinsics k;
    const RigidTransform truth = testing::random_transform(rng);
    const auto lm = landmarks_in_view(rng, truth, 25);
    const auto est = solve_pose(lm, observe_landmarks(lm, truth, k), k, truth);
    EXPECT_LE(est.iterations, 1);
    EXPECT_LT(est.rms_px, 1e-9);
    EXPECT_TRUE(est.converged);
    EXPECT_LT(pose_delta(est.pose, truth).distance_mm, 1e-9);
}

TEST(SolvePose, RecoversFromPerturbedGuess)
{
    std::mt19937_64 rng(2);
    const CameraIntrinsics k;
    for (int trial = 0; trial < 20; ++trial) {
        const RigidTransform truth = testing::random_transform(rng);
        const auto lm = landmarks_in_view(rng, truth, 24);
        const RigidTransform guess = truth * testing::transform_with_magnitude(rng, 10.0, 100.0);
        const auto est = solve_pose(lm, observe_landmarks(lm, truth, k), k, guess);
        const PoseDelta err = pose_delta(est.pose, truth);
        ASSERT_LT(err.distance_mm, 1e-4) << trial;
        ASSERT_LT(err.angle_deg, 1e-5) << trial;
        ASSERT_TRUE(est.converged);
    }
}

TEST(SolvePose, FewerThanFourLandmarksIsUnderdetermined)
{
    std::mt19937_64 rng(3);
    const CameraIntrinsics k;
    const auto lm = landmarks_in_view(rng, RigidTransform::identity(), 3);
    EXPECT_THROW(solve_pose(lm, observe_landmarks(lm, RigidTransform::identity(), k), k, RigidTransform::identity()),
                 UnderdeterminedError);
}

TEST(SolvePose, ObservationsOfUnknownLandmarksAreIgnored)
{
    std::mt19937_64 rng(4);
    const CameraIntrinsics k;
    const auto lm = landmarks_in_view(rng, RigidTransform::identity(), 6);
    auto obs = observe_landmarks(lm, RigidTransform::identity(), k);
    obs.push_back({"ghost", Eigen::Vector2d(10, 10), 0.0});
    const auto est = solve_pose(lm, obs, k, RigidTransform::from_translation(5, 0, 0));
    EXPECT_LT(pose_delta(est.pose, RigidTransform::identity()).distance_mm, 1e-6);
}

TEST(Jacobian, MatchesCentralDifferences)
{
    std::mt19937_64 rng(5);
    const CameraIntrinsics k;
    std::uniform_real_distribution<double> u(-50.0, 50.0);
    for (int trial = 0; trial < 100; ++trial) {
        const RigidTransform pose = testing::random_transform(rng);
        const Vec3 landmark = landmarks_in_view(rng, pose, 1)[0].position;
        const RigidTransform cfw = pose.inverse();
        const Eigen::Vector2d observed(u(rng) + 160, u(rng) + 144);
        const ResidualBlock block = reprojection_residual(cfw, landmark, observed, k);
        Eigen::Matrix<double, 2, 6> fd;
        const double h = 1e-6;
        for (int j = 0; j < 6; ++j) {
            Vec6 xi = Vec6::Zero();
            xi(j) = h;
            const auto plus = reprojection_residual(perturb_left(cfw, xi), landmark, observed, k).residual;
            const auto minus = reprojection_residual(perturb_left(cfw, -xi), landmark, observed, k).residual;
            fd.col(j) = (plus - minus) / (2.0 * h);
        }
        const double rel = (fd - block.jacobian).norm() / block.jacobian.norm();
        ASSERT_LT(rel, 1e-6) << trial;
    }
}

TEST(SolvePose, AcceptedStepsNeverIncreaseCost)
{
    std::mt19937_64 rng(6);
    const CameraIntrinsics k;
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const RigidTransform truth = testing::random_transform(rng);
        const auto lm = landmarks_in_view(rng, truth, 30);
        auto obs = observe_landmarks(lm, truth, k);
        for (auto& o : obs) o.pixel += Eigen::Vector2d(noise(rng), noise(rng));
        const auto est = solve_pose(lm, obs, k, truth * testing::transform_with_magnitude(rng, 8.0, 80.0));
        for (std::size_t i = 1; i < est.cost_history.size(); ++i)
            ASSERT_LE(est.cost_history[i], est.cost_history[i - 1]);
    }
}

TEST(SolvePose, NoiseFloor)
{
    std::mt19937_64 rng(7);
    const CameraIntrinsics k;
    const double sigma = 1.0;
    std::normal_distribution<double> noise(0.0, sigma);
    for (int trial = 0; trial < 100; ++trial) {
        const RigidTransform truth = testing::random_transform(rng);
        const auto lm = landmarks_in_view(rng, truth, 20);
        auto obs = observe_landmarks(lm, truth, k);
        for (auto& o : obs) o.pixel += Eigen::Vector2d(noise(rng), noise(rng));
        const auto est = solve_pose(lm, obs, k, truth);
        ASSERT_TRUE(est.converged);
        ASSERT_GE(est.rms_px, 0.5 * sigma) << trial;
        ASSERT_LE(est.rms_px, 2.0 * sigma) << trial;
    }
}

TEST(SolvePose, ErrorAgainstTruthAgreesWithStatus)
{
    std::mt19937_64 rng(8);
    const CameraIntrinsics k;
    const RigidTransform truth = testing::random_transform(rng);
    const auto lm = landmarks_in_view(rng, truth, 20);
    SolverOptions few;
    few.max_iterations = 1;
    const auto obs = observe_landmarks(lm, truth, k);
    const auto cut = solve_pose(lm, obs, k, truth * testing::transform_with_magnitude(rng, 10.0, 100.0), few);
    EXPECT_FALSE(cut.converged);
    EXPECT_EQ(cut.status, SolveStatus::MaxIterations);
    EXPECT_GT(pose_delta(cut.pose, truth).distance_mm, 1e-4);
}

class TrackerFiles : public ::testing::Test {
protected:
    std::filesystem::path dir = std::filesystem::temp_directory_path() / "carm_tracker_files";
    void SetUp() override { std::filesystem::create_directories(dir); }
    void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(TrackerFiles, JsonLinesLoadAndCiteBadLine)
{
    write_text_file(dir / "lm.jsonl", "{\"id\":\"a\",\"position\":[1,2,3]}\n\n{\"id\":\"b\",\"position\":[4,5,6]}\n");
    const auto lm = load_landmarks(dir / "lm.jsonl");
    ASSERT_EQ(lm.size(), 2u);
    EXPECT_EQ(lm[1].position, Vec3(4, 5, 6));

    write_text_file(dir / "obs.jsonl", "{\"landmark\":\"a\",\"pixel\":[1,2],\"t\":0.5}\n{\"landmark\":\"b\",\"pixel\":[1]}\n");
    try {
        load_observations(dir / "obs.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
    }
}

}  // namespace
}  // namespace carm
