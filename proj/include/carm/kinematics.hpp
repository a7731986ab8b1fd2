#pragma once

#include "carm/geometry.hpp"
#include "carm/primitives.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace carm {

class DofRangeError : public InvalidArgumentError {
public:
    using InvalidArgumentError::InvalidArgumentError;
};

class BehindSourceError : public InvalidArgumentError {
public:
    using InvalidArgumentError::InvalidArgumentError;
};

constexpr std::size_t kDofCount = 7;
using DofVector = std::array<double, kDofCount>;

/// Names in DofVector order.
constexpr std::array<std::string_view, kDofCount> kDofNames{
    "base_x", "base_y", "column_height", "wheel_yaw", "orbital", "angular_tilt", "swivel"};

/// Joint state of a mobile C-arm. Lengths in mm, angles in degrees.
struct CArmDofs {
    double base_x = 0.0;
    double base_y = 0.0;
    double column_height = 225.0;
    double wheel_yaw = 0.0;
    double orbital = 0.0;
    double angular_tilt = 0.0;
    double swivel = 0.0;

    DofVector to_vector() const;
    static CArmDofs from_vector(const DofVector& v);

    double& operator[](std::size_t i);
    double operator[](std::size_t i) const;

    friend bool operator==(const CArmDofs&, const CArmDofs&) = default;
};

struct DofLimits {
    double lower;
    double upper;
};

/// Per-DOF limits; unbounded DOFs report +-infinity.
DofLimits dof_limits(std::size_t index);
std::optional<std::size_t> dof_index(std::string_view name);

/// Throws DofRangeError naming the first offending DOF.
void validate(const CArmDofs& dofs);
CArmDofs clamp_to_limits(const CArmDofs& dofs);

struct CArmGeometry {
    double source_to_isocenter = 600.0;
    double source_to_detector = 1000.0;
    int detector_width_px = 1024;
    int detector_height_px = 1024;
    double pixel_pitch = 0.3;

    double arc_tube_radius = 40.0;  ///< C-arc major radius is SID / 2
    double arc_sweep_deg = 180.0;

    Vec3 column_axis{-900.0, 0.0, -700.0};  ///< bottom centre of the column, base frame
    double column_radius = 120.0;
    double column_length = 700.0;

    Vec3 base_center{-900.0, 0.0, -850.0};
    Vec3 base_half_extents{450.0, 350.0, 150.0};

    double swivel_pivot_x = -800.0;         ///< vertical swivel axis, lift frame
    double neutral_column_height = 225.0;   ///< lift value placing the isocenter at z = 0

    /// Throws InvalidArgumentError when the geometry is inconsistent.
    void validate() const;
};

CArmDofs neutral_dofs(const CArmGeometry& geom);

/// Device poses in the world frame (World <- device part).
struct CArmPoses {
    RigidTransform base;      ///< wheels and column
    RigidTransform gantry;    ///< isocenter, C-plane axes
    RigidTransform source;
    RigidTransform detector;
};

/// Neutral DOFs put the isocenter on the world origin with the source on -z
/// and the detector on +z. Throws DofRangeError for out-of-range DOFs.
CArmPoses forward_kinematics(const CArmDofs& dofs, const CArmGeometry& geom);

/// World-placed C-arc (partial torus), column (cylinder) and base (box).
SurfaceModel surface_model(const CArmDofs& dofs, const CArmGeometry& geom);

/// Deterministic stratified sample of the device surface in World.
/// Each primitive receives round(density * area) points.
TaggedPointCloud sample_surface(const CArmDofs& dofs, const CArmGeometry& geom,
                                double density_per_m2, std::uint64_t seed);

struct Keypoint3D {
    std::string id;
    Vec3 position;  ///< World, mm
};

struct XrayProjection {
    Eigen::Vector2d pixel;  ///< (u, v), principal point at the detector centre
    bool in_field_of_view = false;
};

/// Central projection from the focal spot onto the detector plane. Throws
/// BehindSourceError when the point is not strictly in front of the source.
XrayProjection xray_project(const Vec3& point, const CArmDofs& dofs, const CArmGeometry& geom);
XrayProjection xray_project(const Keypoint3D& keypoint, const CArmDofs& dofs,
                            const CArmGeometry& geom);

struct DofHint {
    bool reliable = false;
    DofVector increments{};
    double condition_number = 0.0;
    std::string reason;  ///< set when no reliable hint exists
};

struct HintOptions {
    double max_angle_deg = 15.0;
    double max_distance_mm = 200.0;
    double angle_weight_mm_per_deg = 10.0;
    double max_condition_number = 1e4;
    double damping = 1e-2;
    int refinement_steps = 8;
};

/// DOF increments that move the gantry from its current pose G to delta * G.
/// Damped least squares on a central-difference Jacobian of the gantry pose.
/// Throws DofRangeError when delta exceeds the small-motion envelope.
DofHint dof_adjustment_from_delta(const RigidTransform& delta, const CArmDofs& current,
                                  const CArmGeometry& geom, const HintOptions& options = {});

/// Named DOF presets used by scenarios (inlet, outlet, obliques, neutral).
CArmDofs preset_dofs(std::string_view name, const CArmGeometry& geom);

nlohmann::json to_json(const CArmDofs& dofs);
CArmDofs dofs_from_json(const nlohmann::json& j, const CArmDofs& defaults = {});
nlohmann::json to_json(const CArmGeometry& geom);
CArmGeometry geometry_from_json(const nlohmann::json& j);

}  // namespace carm
