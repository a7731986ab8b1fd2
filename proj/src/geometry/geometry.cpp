#include "carm/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <tuple>

namespace carm {

namespace {

constexpr std::array<std::pair<Frame, std::string_view>, 6> kFrameNames{{
    {Frame::World, "World"},
    {Frame::Technician, "Technician"},
    {Frame::IRSensor, "IRSensor"},
    {Frame::CArm, "CArm"},
    {Frame::Detector, "Detector"},
    {Frame::Display, "Display"},
}};

Quat normalized_positive(Quat q)
{
    // Skipping already-unit inputs keeps construction idempotent, which makes
    // serialized poses reload bit-exactly.
    if (std::abs(q.squaredNorm() - 1.0) > 4e-16) q.normalize();
    // Canonical hemisphere keeps serialized poses unique.
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    return q;
}

}  // namespace

std::string_view to_string(Frame frame)
{
    for (const auto& [f, name] : kFrameNames)
        if (f == frame) return name;
    return "Unknown";
}

Frame frame_from_string(std::string_view name)
{
    for (const auto& [f, n] : kFrameNames)
        if (n == name) return f;
    throw InvalidArgumentError("unknown frame '" + std::string(name) + "'");
}

RigidTransform::RigidTransform(const Quat& rotation, const Vec3& translation)
    : rotation_(normalized_positive(rotation)), translation_(translation)
{
}

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation)
    : RigidTransform(Quat(rotation), translation)
{
}

RigidTransform RigidTransform::from_translation(const Vec3& t)
{
    return {Quat::Identity(), t};
}

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle_rad,
                                               const Vec3& translation)
{
    return {Quat(Eigen::AngleAxisd(angle_rad, axis.normalized())), translation};
}

RigidTransform RigidTransform::rot_x(double deg) { return from_axis_angle(Vec3::UnitX(), deg2rad(deg)); }
RigidTransform RigidTransform::rot_y(double deg) { return from_axis_angle(Vec3::UnitY(), deg2rad(deg)); }
RigidTransform RigidTransform::rot_z(double deg) { return from_axis_angle(Vec3::UnitZ(), deg2rad(deg)); }

RigidTransform RigidTransform::from_rotation_vector(const Vec3& omega, const Vec3& translation)
{
    const double theta = omega.norm();
    if (theta < 1e-300) return from_translation(translation);
    return {Quat(Eigen::AngleAxisd(theta, omega / theta)), translation};
}

RigidTransform RigidTransform::from_matrix(const Mat4& m, double tol)
{
    const Mat3 r = m.topLeftCorner<3, 3>();
    const double ortho = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (!m.allFinite() || ortho > tol || std::abs(r.determinant() - 1.0) > tol)
        throw InvalidArgumentError("matrix is not a proper rigid transform");
    if ((m.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tol)
        throw InvalidArgumentError("matrix bottom row must be [0 0 0 1]");
    return {r, m.topRightCorner<3, 1>()};
}

Mat4 RigidTransform::matrix() const
{
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation_matrix();
    m.topRightCorner<3, 1>() = translation_;
    return m;
}

RigidTransform RigidTransform::inverse() const
{
    const Quat inv = rotation_.conjugate();
    return {inv, -(inv * translation_)};
}

double RigidTransform::angle() const
{
    return 2.0 * std::atan2(rotation_.vec().norm(), std::abs(rotation_.w()));
}

Vec3 RigidTransform::rotation_vector() const
{
    const double s = rotation_.vec().norm();
    if (s < 1e-300) return Vec3::Zero();
    // rotation_ is kept in the w >= 0 hemisphere, so the angle is in [0, pi].
    const double theta = 2.0 * std::atan2(s, rotation_.w());
    return rotation_.vec() * (theta / s);
}

RigidTransform operator*(const RigidTransform& a, const RigidTransform& b)
{
    return {a.rotation_ * b.rotation_, a.rotation_ * b.translation_ + a.translation_};
}

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) { return a * b; }
RigidTransform invert(const RigidTransform& t) { return t.inverse(); }

FrameTransform compose(const FrameTransform& a, const FrameTransform& b)
{
    if (a.source != b.target)
        throw FrameMismatchError("cannot chain " + std::string(to_string(a.target)) + "<-" +
                                 std::string(to_string(a.source)) + " with " +
                                 std::string(to_string(b.target)) + "<-" +
                                 std::string(to_string(b.source)));
    return {a.transform * b.transform, a.target, b.source};
}

FrameTransform invert(const FrameTransform& t)
{
    return {t.transform.inverse(), t.source, t.target};
}

Vec3 apply_to_point(const FrameTransform& t, const Vec3& p, Frame from, Frame to)
{
    if (t.source != from || t.target != to)
        throw FrameMismatchError("transform maps " + std::string(to_string(t.source)) + "->" +
                                 std::string(to_string(t.target)) + ", requested " +
                                 std::string(to_string(from)) + "->" + std::string(to_string(to)));
    return t.transform.apply(p);
}

void require_valid(const TaggedPointCloud& cloud, std::string_view what)
{
    if (cloud.points.empty()) throw InvalidArgumentError(std::string(what) + ": point cloud is empty");
    for (const auto& p : cloud.points)
        if (!p.allFinite())
            throw InvalidArgumentError(std::string(what) + ": point cloud has non-finite coordinates");
}

TaggedPointCloud transform_cloud(const FrameTransform& t, const TaggedPointCloud& cloud)
{
    if (cloud.frame != t.source)
        throw FrameMismatchError("cloud is in " + std::string(to_string(cloud.frame)) +
                                 " but transform expects " + std::string(to_string(t.source)));
    TaggedPointCloud out{t.target, {}, cloud.timestamp};
    out.points.reserve(cloud.points.size());
    for (const auto& p : cloud.points) out.points.push_back(t.transform.apply(p));
    return out;
}

PoseDelta pose_delta(const RigidTransform& a, const RigidTransform& b)
{
    // Evaluate in a canonical argument order so the result is bitwise symmetric.
    const auto key = [](const RigidTransform& t) {
        const auto& q = t.rotation().coeffs();
        const auto& p = t.translation();
        return std::make_tuple(q[0], q[1], q[2], q[3], p[0], p[1], p[2]);
    };
    const RigidTransform& first = key(a) <= key(b) ? a : b;
    const RigidTransform& second = &first == &a ? b : a;

    PoseDelta delta;
    delta.distance_mm = (second.translation() - first.translation()).norm();
    const Quat rel = first.rotation().conjugate() * second.rotation();
    delta.angle_deg = std::clamp(rad2deg(2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w()))),
                                 0.0, 180.0);
    return delta;
}

}  // namespace carm
