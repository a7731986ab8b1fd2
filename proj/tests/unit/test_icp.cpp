#include "carm/icp.hpp"
#include "carm/kdtree.hpp"
#include "carm/kinematics.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <limits>

namespace carm {
namespace {

std::vector<Vec3> random_points(std::mt19937_64& rng, int n, double half = 1000.0)
{
    std::uniform_real_distribution<double> u(-half, half);
    std::vector<Vec3> pts;
    for (int i = 0; i < n; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
    return pts;
}

std::size_t linear_scan(const std::vector<Vec3>& pts, const Vec3& q)
{
    std::size_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < pts.size(); ++i)
        if (const double d2 = (pts[i] - q).squaredNorm(); d2 < best_d2) {
            best_d2 = d2;
            best = i;
        }
    return best;
}

TEST(KdTree, SinglePoint)
{
    const std::vector<Vec3> pts{Vec3::Zero()};
    const KdTree tree(pts);
    const auto nn = tree.nearest(Vec3(1, 0, 0));
    EXPECT_EQ(nn.point, Vec3::Zero());
    EXPECT_EQ(nn.distance, 1.0);
}

TEST(KdTree, QueryOnIndexedPointHasZeroDistance)
{
    std::mt19937_64 rng(1);
    const auto pts = random_points(rng, 200);
    const KdTree tree(pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto nn = tree.nearest(pts[i]);
        ASSERT_EQ(nn.distance, 0.0);
        ASSERT_EQ(nn.index, i);
    }
}

TEST(KdTree, MatchesLinearScan)
{
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        const auto pts = random_points(rng, 1000);
        const KdTree tree(pts);
        for (const auto& q : random_points(rng, 1000, 1200.0)) ASSERT_EQ(tree.nearest(q).index, linear_scan(pts, q));
    }
}

TEST(KdTree, DuplicatesResolveToLowestIndex)
{
    const std::vector<Vec3> pts{Vec3(1, 1, 1), Vec3(5, 5, 5), Vec3(1, 1, 1), Vec3(1, 1, 1)};
    EXPECT_EQ(KdTree(pts).nearest(Vec3(1, 1, 1.1)).index, 0u);
}

TEST(KdTree, EmptyAndNonFinite)
{
    EXPECT_THROW(KdTree().nearest(Vec3::Zero()), InvalidArgumentError);
    const std::vector<Vec3> bad{Vec3(0, std::numeric_limits<double>::quiet_NaN(), 0)};
    EXPECT_THROW(KdTree{bad}, InvalidArgumentError);
}

TEST(FitRigid, RecoversExactTransform)
{
    std::mt19937_64 rng(3);
    const auto src = random_points(rng, 50);
    const RigidTransform truth = testing::random_transform(rng);
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.push_back(truth.apply(p));
    const RigidTransform fit = fit_rigid(src, dst);
    EXPECT_LT(pose_delta(fit, truth).distance_mm, 1e-9);
    EXPECT_LT(pose_delta(fit, truth).angle_deg, 1e-9);
}

TEST(FitRigid, NeverReturnsAReflection)
{
    // Mirror image of a tetrahedron: the best proper rotation must still have det +1.
    const std::vector<Vec3> src{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    std::vector<Vec3> dst;
    for (const auto& p : src) dst.emplace_back(-p.x(), p.y(), p.z());
    EXPECT_NEAR(fit_rigid(src, dst).rotation_matrix().determinant(), 1.0, 1e-12);
}

class IcpOnCArm : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        const CArmGeometry geom;
        saved_ = new TaggedPointCloud(sample_surface(preset_dofs("inlet", geom), geom, 2000.0, 17));
        index_ = new KdTree(*saved_);
    }
    static void TearDownTestSuite()
    {
        delete index_;
        delete saved_;
    }
    static TaggedPointCloud moved(const RigidTransform& t)
    {
        TaggedPointCloud out = *saved_;
        for (auto& p : out.points) p = t.apply(p);
        return out;
    }
    static TaggedPointCloud* saved_;
    static KdTree* index_;
};
TaggedPointCloud* IcpOnCArm::saved_ = nullptr;
KdTree* IcpOnCArm::index_ = nullptr;

void expect_monotone(const AlignmentReport& r)
{
    for (std::size_t i = 1; i < r.rms_history.size(); ++i) ASSERT_LE(r.rms_history[i], r.rms_history[i - 1]);
}

TEST_F(IcpOnCArm, IdenticalCloudsConvergeImmediately)
{
    ASSERT_GE(saved_->size(), 5000u);
    const auto r = icp_align(*saved_, *saved_);
    EXPECT_EQ(r.rms, 0.0);
    EXPECT_LE(r.iterations, 1);
    EXPECT_TRUE(r.converged);
    EXPECT_LT(pose_delta(r.delta, RigidTransform::identity()).distance_mm, 1e-9);
}

TEST_F(IcpOnCArm, RecoversSmallRotationAndShift)
{
    const RigidTransform t = RigidTransform::from_axis_angle(Vec3::UnitZ(), deg2rad(5.0), Vec3(20, 0, 0));
    const auto r = icp_align(moved(t), *index_, Frame::World);
    const PoseDelta err = pose_delta(r.delta, invert(t));
    EXPECT_LT(err.distance_mm, 0.5);
    EXPECT_LT(err.angle_deg, 0.05);
    EXPECT_LT(r.rms, 1e-6);
    EXPECT_TRUE(r.converged);
    expect_monotone(r);
}

TEST_F(IcpOnCArm, RandomPerturbationsRecovered)
{
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 10; ++trial) {
        const RigidTransform t = testing::transform_with_magnitude(rng, 10.0 * u(rng), 100.0 * u(rng));
        const auto r = icp_align(moved(t), *index_, Frame::World);
        const PoseDelta err = pose_delta(r.delta, invert(t));
        ASSERT_LT(err.distance_mm, 0.5) << trial;
        ASSERT_LT(err.angle_deg, 0.05) << trial;
        ASSERT_LE(r.iterations, 50);
        expect_monotone(r);
    }
}

TEST_F(IcpOnCArm, FarApartCloudsHaveNoOverlap)
{
    EXPECT_THROW(icp_align(moved(RigidTransform::from_translation(0, 0, 5000)), *index_, Frame::World),
                 InsufficientOverlapError);
}

TEST(Icp, FrameMismatchAndEmptyInputs)
{
    const TaggedPointCloud a{Frame::World, {Vec3::Zero()}, 0.0};
    const TaggedPointCloud b{Frame::Technician, {Vec3::Zero()}, 0.0};
    EXPECT_THROW(icp_align(a, b), FrameMismatchError);
    EXPECT_THROW(icp_align(a, TaggedPointCloud{Frame::World, {}, 0.0}), InvalidArgumentError);
    IcpParams bad;
    bad.max_iterations = 0;
    EXPECT_THROW(icp_align(a, a, bad), InvalidArgumentError);
}

TEST(Banding, ThresholdsAndJson)
{
    EXPECT_EQ(classify(PoseDelta{3.0, 0.5}), AlignmentBand::Green);
    EXPECT_EQ(classify(PoseDelta{12.0, 2.0}), AlignmentBand::Amber);
    EXPECT_EQ(classify(PoseDelta{3.0, 4.0}), AlignmentBand::Red);
    EXPECT_EQ(classify(PoseDelta{25.0, 0.0}), AlignmentBand::Red);

    AlignmentReport r;
    r.delta = RigidTransform::from_translation(12, 0, 0);
    const auto j = to_json(r);
    EXPECT_EQ(j.at("band"), "amber");
    EXPECT_EQ(j.at("band_is_clinical"), false);
    EXPECT_DOUBLE_EQ(j.at("distance_mm").get<double>(), 12.0);
    EXPECT_FALSE(j.contains("dof_hints"));
}

TEST(IcpParamsJson, RoundTripAndValidation)
{
    IcpParams p;
    p.max_correspondence_distance = 80.0;
    EXPECT_EQ(icp_params_from_json(to_json(p)).max_correspondence_distance, 80.0);
    EXPECT_THROW(icp_params_from_json({{"rms_delta_threshold", -1.0}}), InvalidArgumentError);
}

}  // namespace
}  // namespace carm
