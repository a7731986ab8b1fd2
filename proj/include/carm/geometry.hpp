#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace carm {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Quat = Eigen::Quaterniond;

constexpr double kPi = 3.14159265358979323846;
constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Root of every error this library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FrameMismatchError : public Error {
public:
    using Error::Error;
};

class InvalidArgumentError : public Error {
public:
    using Error::Error;
};

enum class Frame { World, Technician, IRSensor, CArm, Detector, Display };

std::string_view to_string(Frame frame);
Frame frame_from_string(std::string_view name);

/// Proper rigid motion x -> R x + t. Rotation is stored as a unit quaternion
/// and renormalized on every construction, so composition never drifts.
class RigidTransform {
public:
    RigidTransform() = default;
    RigidTransform(const Quat& rotation, const Vec3& translation);
    RigidTransform(const Mat3& rotation, const Vec3& translation);

    static RigidTransform identity() { return {}; }
    static RigidTransform from_translation(const Vec3& t);
    static RigidTransform from_translation(double x, double y, double z)
    {
        return from_translation(Vec3{x, y, z});
    }
    static RigidTransform from_axis_angle(const Vec3& axis, double angle_rad,
                                         const Vec3& translation = Vec3::Zero());
    static RigidTransform rot_x(double deg);
    static RigidTransform rot_y(double deg);
    static RigidTransform rot_z(double deg);

    /// Exponential map of a twist (rotation vector in rad, translation) with
    /// the translation applied directly (not the SE(3) left Jacobian).
    static RigidTransform from_rotation_vector(const Vec3& omega,
                                              const Vec3& translation = Vec3::Zero());

    /// Rejects matrices whose upper-left block is not a rotation within `tol`.
    static RigidTransform from_matrix(const Mat4& m, double tol = 1e-6);

    const Quat& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }
    Mat3 rotation_matrix() const { return rotation_.toRotationMatrix(); }
    Mat4 matrix() const;

    Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
    RigidTransform inverse() const;

    /// Rotation angle in radians, in [0, pi].
    double angle() const;
    /// Rotation vector (axis * angle, rad).
    Vec3 rotation_vector() const;

    friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b);
    friend bool operator==(const RigidTransform& a, const RigidTransform& b)
    {
        return a.rotation_.coeffs() == b.rotation_.coeffs() && a.translation_ == b.translation_;
    }

private:
    Quat rotation_ = Quat::Identity();
    Vec3 translation_ = Vec3::Zero();
};

/// Result applies `b` first, then `a`.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);

/// ^target T_source: maps coordinates expressed in `source` into `target`.
/// A pose "A->B" in this code base is ^A T_B, i.e. the pose of B seen from A.
struct FrameTransform {
    RigidTransform transform;
    Frame target = Frame::World;
    Frame source = Frame::World;
};

/// Requires a.source == b.target.
FrameTransform compose(const FrameTransform& a, const FrameTransform& b);
FrameTransform invert(const FrameTransform& t);

/// Requires t.source == from and t.target == to.
Vec3 apply_to_point(const FrameTransform& t, const Vec3& p, Frame from, Frame to);

struct TaggedPointCloud {
    Frame frame = Frame::World;
    std::vector<Vec3> points;
    double timestamp = 0.0;

    bool empty() const { return points.empty(); }
    std::size_t size() const { return points.size(); }
};

/// Throws if the cloud is empty or holds a non-finite coordinate.
void require_valid(const TaggedPointCloud& cloud, std::string_view what);

/// Maps every point; the cloud's frame must equal t.source.
TaggedPointCloud transform_cloud(const FrameTransform& t, const TaggedPointCloud& cloud);

struct PoseDelta {
    double distance_mm = 0.0;
    double angle_deg = 0.0;
};

/// Translation distance and geodesic angle of the relative rotation.
/// Symmetric in its arguments.
PoseDelta pose_delta(const RigidTransform& a, const RigidTransform& b);

}  // namespace carm
