#include "carm/kinematics.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <limits>

namespace carm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

constexpr std::array<DofLimits, kDofCount> kLimits{{
    {-kInf, kInf},     // base_x
    {-kInf, kInf},     // base_y
    {0.0, 450.0},      // column_height
    {-kInf, kInf},     // wheel_yaw
    {-95.0, 95.0},     // orbital
    {-190.0, 190.0},   // angular_tilt
    {-12.0, 12.0},     // swivel
}};

RigidTransform rot_z_about(const Vec3& pivot, double deg)
{
    return RigidTransform::from_translation(pivot) * RigidTransform::rot_z(deg) *
           RigidTransform::from_translation(-pivot);
}

struct Chain {
    RigidTransform base;
    RigidTransform gantry;
};

// No range checks: the Jacobian probes straddle the limits.
Chain chain_unchecked(const CArmDofs& q, const CArmGeometry& g)
{
    const Vec3 column_xy(g.column_axis.x(), g.column_axis.y(), 0.0);
    Chain c;
    c.base = RigidTransform::from_translation(q.base_x, q.base_y, 0.0) * rot_z_about(column_xy, q.wheel_yaw);
    const RigidTransform lift =
        c.base * RigidTransform::from_translation(0.0, 0.0, q.column_height - g.neutral_column_height);
    c.gantry = lift * rot_z_about(Vec3(g.swivel_pivot_x, 0.0, 0.0), q.swivel) *
               RigidTransform::rot_x(q.angular_tilt) * RigidTransform::rot_y(q.orbital);
    return c;
}

// Residual between a gantry pose and a target: translation (mm) and weighted
// rotation vector (mm-equivalent via deg weight), both in World.
Eigen::Matrix<double, 6, 1> pose_residual(const RigidTransform& pose, const RigidTransform& target,
                                          double angle_weight)
{
    Eigen::Matrix<double, 6, 1> r;
    r.head<3>() = pose.translation() - target.translation();
    const RigidTransform rel(pose.rotation() * target.rotation().conjugate(), Vec3::Zero());
    r.tail<3>() = angle_weight * rad2deg(1.0) * rel.rotation_vector();
    return r;
}

}  // namespace

DofVector CArmDofs::to_vector() const
{
    return {base_x, base_y, column_height, wheel_yaw, orbital, angular_tilt, swivel};
}

CArmDofs CArmDofs::from_vector(const DofVector& v)
{
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

double& CArmDofs::operator[](std::size_t i)
{
    switch (i) {
    case 0: return base_x;
    case 1: return base_y;
    case 2: return column_height;
    case 3: return wheel_yaw;
    case 4: return orbital;
    case 5: return angular_tilt;
    case 6: return swivel;
    default: throw InvalidArgumentError("DOF index out of range");
    }
}

double CArmDofs::operator[](std::size_t i) const { return const_cast<CArmDofs&>(*this)[i]; }

DofLimits dof_limits(std::size_t index)
{
    if (index >= kDofCount) throw InvalidArgumentError("DOF index out of range");
    return kLimits[index];
}

std::optional<std::size_t> dof_index(std::string_view name)
{
    for (std::size_t i = 0; i < kDofCount; ++i)
        if (kDofNames[i] == name) return i;
    return std::nullopt;
}

void validate(const CArmDofs& dofs)
{
    for (std::size_t i = 0; i < kDofCount; ++i) {
        const double v = dofs[i];
        if (!std::isfinite(v))
            throw DofRangeError(std::string(kDofNames[i]) + " is not finite");
        if (v < kLimits[i].lower || v > kLimits[i].upper)
            throw DofRangeError(std::string(kDofNames[i]) + "=" + std::to_string(v) + " outside [" +
                                std::to_string(kLimits[i].lower) + ", " +
                                std::to_string(kLimits[i].upper) + "]");
    }
}

CArmDofs clamp_to_limits(const CArmDofs& dofs)
{
    CArmDofs out = dofs;
    for (std::size_t i = 0; i < kDofCount; ++i)
        out[i] = std::clamp(out[i], kLimits[i].lower, kLimits[i].upper);
    return out;
}

void CArmGeometry::validate() const
{
    if (!(source_to_isocenter > 0.0 && source_to_isocenter < source_to_detector))
        throw InvalidArgumentError("geometry requires 0 < source_to_isocenter < source_to_detector");
    if (!(pixel_pitch > 0.0)) throw InvalidArgumentError("pixel_pitch must be positive");
    if (detector_width_px <= 0 || detector_height_px <= 0)
        throw InvalidArgumentError("detector size must be positive");
    if (!(arc_tube_radius > 0.0 && arc_tube_radius < source_to_detector / 2.0))
        throw InvalidArgumentError("arc tube radius must be in (0, SID/2)");
    if (!(arc_sweep_deg > 0.0 && arc_sweep_deg <= 360.0))
        throw InvalidArgumentError("arc sweep must be in (0, 360]");
    if (!(column_radius > 0.0 && column_length > 0.0))
        throw InvalidArgumentError("column dimensions must be positive");
    if (!(base_half_extents.minCoeff() > 0.0))
        throw InvalidArgumentError("base extents must be positive");
}

CArmDofs neutral_dofs(const CArmGeometry& geom)
{
    CArmDofs d;
    d.column_height = geom.neutral_column_height;
    return d;
}

CArmPoses forward_kinematics(const CArmDofs& dofs, const CArmGeometry& geom)
{
    validate(dofs);
    const Chain c = chain_unchecked(dofs, geom);
    CArmPoses poses;
    poses.base = c.base;
    poses.gantry = c.gantry;
    poses.source = c.gantry * RigidTransform::from_translation(0.0, 0.0, -geom.source_to_isocenter);
    poses.detector = c.gantry * RigidTransform::from_translation(
                                    0.0, 0.0, geom.source_to_detector - geom.source_to_isocenter);
    return poses;
}

SurfaceModel surface_model(const CArmDofs& dofs, const CArmGeometry& geom)
{
    const CArmPoses poses = forward_kinematics(dofs, geom);

    // The arc spans source to detector, bulging towards -x (the column side).
    // Local torus axis z maps to gantry +y; local x to gantry +x, local y to gantry -z.
    const double arc_center_z = geom.source_to_detector / 2.0 - geom.source_to_isocenter;
    PartialTorusShape arc;
    arc.major_radius = geom.source_to_detector / 2.0;
    arc.minor_radius = geom.arc_tube_radius;
    arc.start_deg = 180.0 - geom.arc_sweep_deg / 2.0;
    arc.sweep_deg = geom.arc_sweep_deg;
    const RigidTransform arc_local =
        RigidTransform::from_translation(0.0, 0.0, arc_center_z) * RigidTransform::rot_x(-90.0);

    SurfaceModel model;
    model.push_back({"c_arc", arc, poses.gantry * arc_local});
    model.push_back({"column", CylinderShape{geom.column_radius, geom.column_length},
                     poses.base * RigidTransform::from_translation(geom.column_axis)});
    model.push_back({"base", BoxShape{geom.base_half_extents},
                     poses.base * RigidTransform::from_translation(geom.base_center)});
    return model;
}

TaggedPointCloud sample_surface(const CArmDofs& dofs, const CArmGeometry& geom,
                                double density_per_m2, std::uint64_t seed)
{
    if (!(density_per_m2 > 0.0)) throw InvalidArgumentError("sampling density must be positive");
    const SurfaceModel model = surface_model(dofs, geom);
    std::mt19937_64 rng(seed);
    TaggedPointCloud cloud{Frame::World, {}, 0.0};
    for (const auto& prim : model) {
        const auto count =
            static_cast<std::size_t>(std::llround(density_per_m2 * surface_area(prim.shape) / 1e6));
        for (const auto& p : sample_local(prim.shape, count, rng)) cloud.points.push_back(prim.pose.apply(p));
    }
    return cloud;
}

XrayProjection xray_project(const Vec3& point, const CArmDofs& dofs, const CArmGeometry& geom)
{
    const CArmPoses poses = forward_kinematics(dofs, geom);
    const Mat3 axes = poses.gantry.rotation_matrix();
    const Vec3 source = poses.source.translation();
    const Vec3 ray = point - source;
    const double depth = ray.dot(axes.col(2));
    if (!(depth > 1e-9))
        throw BehindSourceError("point is not in front of the X-ray source (depth " + std::to_string(depth) +
                                " mm)");
    const Vec3 on_detector = source + ray * (geom.source_to_detector / depth);
    const Vec3 offset = on_detector - poses.detector.translation();

    XrayProjection out;
    out.pixel.x() = offset.dot(axes.col(0)) / geom.pixel_pitch + geom.detector_width_px / 2.0;
    out.pixel.y() = offset.dot(axes.col(1)) / geom.pixel_pitch + geom.detector_height_px / 2.0;
    out.in_field_of_view = out.pixel.x() >= 0.0 && out.pixel.x() < geom.detector_width_px &&
                           out.pixel.y() >= 0.0 && out.pixel.y() < geom.detector_height_px;
    return out;
}

XrayProjection xray_project(const Keypoint3D& keypoint, const CArmDofs& dofs, const CArmGeometry& geom)
{
    return xray_project(keypoint.position, dofs, geom);
}

DofHint dof_adjustment_from_delta(const RigidTransform& delta, const CArmDofs& current,
                                  const CArmGeometry& geom, const HintOptions& options)
{
    const PoseDelta size = pose_delta(RigidTransform::identity(), delta);
    if (size.angle_deg > options.max_angle_deg || size.distance_mm > options.max_distance_mm)
        throw DofRangeError("delta of " + std::to_string(size.distance_mm) + " mm / " +
                            std::to_string(size.angle_deg) + " deg exceeds the hint envelope (" +
                            std::to_string(options.max_distance_mm) + " mm / " +
                            std::to_string(options.max_angle_deg) + " deg)");
    validate(current);

    const RigidTransform target = delta * chain_unchecked(current, geom).gantry;
    const double w = options.angle_weight_mm_per_deg;
    const auto residual_at = [&](const CArmDofs& q) {
        return pose_residual(chain_unchecked(q, geom).gantry, target, w);
    };

    DofHint hint;
    CArmDofs q = current;
    constexpr double kProbe = 1e-4;
    for (int step = 0; step < std::max(1, options.refinement_steps); ++step) {
        const Eigen::Matrix<double, 6, 1> r = residual_at(q);
        if (r.norm() < 1e-10) break;

        Eigen::Matrix<double, 6, kDofCount> jac;
        for (std::size_t k = 0; k < kDofCount; ++k) {
            CArmDofs plus = q, minus = q;
            plus[k] += kProbe;
            minus[k] -= kProbe;
            jac.col(static_cast<Eigen::Index>(k)) = (residual_at(plus) - residual_at(minus)) / (2.0 * kProbe);
        }

        const Eigen::JacobiSVD<Eigen::Matrix<double, 6, kDofCount>> svd(jac);
        const auto& sv = svd.singularValues();
        const double cond = sv(5) > 0.0 ? sv(0) / sv(5) : std::numeric_limits<double>::infinity();
        if (step == 0) hint.condition_number = cond;
        if (!(cond <= options.max_condition_number)) {
            hint.reliable = false;
            hint.increments.fill(0.0);
            hint.reason = "ill-conditioned C-arm Jacobian (condition " + std::to_string(cond) + ")";
            return hint;
        }

        const double lambda = options.damping * sv(0);
        // Joints that would leave their range are frozen and the step re-solved
        // without them; a short backtrack guards against overshoot.
        std::array<bool, kDofCount> frozen{};
        CArmDofs next = q;
        for (std::size_t pass = 0; pass < kDofCount; ++pass) {
            Eigen::Matrix<double, 6, kDofCount> active = jac;
            for (std::size_t k = 0; k < kDofCount; ++k)
                if (frozen[k]) active.col(static_cast<Eigen::Index>(k)).setZero();
            const Eigen::Matrix<double, 6, 6> jjt =
                active * active.transpose() + lambda * lambda * Eigen::Matrix<double, 6, 6>::Identity();
            const Eigen::Matrix<double, kDofCount, 1> dq = -active.transpose() * jjt.ldlt().solve(r);
            bool clipped = false;
            for (std::size_t k = 0; k < kDofCount; ++k) {
                next[k] = q[k] + dq(static_cast<Eigen::Index>(k));
                const DofLimits lim = dof_limits(k);
                if (!frozen[k] && (next[k] < lim.lower || next[k] > lim.upper)) {
                    frozen[k] = true;
                    clipped = true;
                }
            }
            if (!clipped) break;
        }
        next = clamp_to_limits(next);

        double scale = 1.0;
        CArmDofs trial = next;
        while (residual_at(trial).norm() >= r.norm() && scale > 1.0 / 16.0) {
            scale *= 0.5;
            for (std::size_t k = 0; k < kDofCount; ++k) trial[k] = q[k] + scale * (next[k] - q[k]);
        }
        if (residual_at(trial).norm() >= r.norm()) break;
        next = trial;
        q = next;
    }

    for (std::size_t k = 0; k < kDofCount; ++k) hint.increments[k] = q[k] - current[k];
    hint.reliable = true;
    return hint;
}

CArmDofs preset_dofs(std::string_view name, const CArmGeometry& geom)
{
    CArmDofs d = neutral_dofs(geom);
    if (name == "neutral") return d;
    if (name == "inlet") {
        d.angular_tilt = -40.0;
    } else if (name == "outlet") {
        d.angular_tilt = 40.0;
    } else if (name == "cranial_oblique" || name == "caudal_oblique" || name == "cranial_oblique_opposing" ||
               name == "caudal_oblique_opposing") {
        const bool opposing = name.ends_with("_opposing");
        d.wheel_yaw = opposing ? -45.0 : 45.0;
        d.angular_tilt = name.starts_with("cranial") ? -20.0 : 20.0;
        // Drive the base so the isocenter stays on the patient after turning the wheels.
        const Vec3 pivot(geom.column_axis.x(), geom.column_axis.y(), 0.0);
        const Vec3 iso = pivot + RigidTransform::rot_z(d.wheel_yaw).apply(-pivot);
        d.base_x = -iso.x();
        d.base_y = -iso.y();
    } else {
        throw InvalidArgumentError("unknown DOF preset '" + std::string(name) + "'");
    }
    return d;
}

nlohmann::json to_json(const CArmDofs& dofs)
{
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < kDofCount; ++i) j[std::string(kDofNames[i])] = dofs[i];
    return j;
}

CArmDofs dofs_from_json(const nlohmann::json& j, const CArmDofs& defaults)
{
    if (!j.is_object()) throw InvalidArgumentError("DOFs must be a JSON object");
    CArmDofs out = defaults;
    for (const auto& [key, value] : j.items()) {
        const auto idx = dof_index(key);
        if (!idx) throw InvalidArgumentError("unknown DOF '" + key + "'");
        if (!value.is_number()) throw InvalidArgumentError("DOF '" + key + "' must be a number");
        out[*idx] = value.get<double>();
    }
    return out;
}

nlohmann::json to_json(const CArmGeometry& g)
{
    return {
        {"source_to_isocenter", g.source_to_isocenter},
        {"source_to_detector", g.source_to_detector},
        {"detector_width_px", g.detector_width_px},
        {"detector_height_px", g.detector_height_px},
        {"pixel_pitch", g.pixel_pitch},
        {"arc_tube_radius", g.arc_tube_radius},
        {"arc_sweep_deg", g.arc_sweep_deg},
        {"column_axis", {g.column_axis.x(), g.column_axis.y(), g.column_axis.z()}},
        {"column_radius", g.column_radius},
        {"column_length", g.column_length},
        {"base_center", {g.base_center.x(), g.base_center.y(), g.base_center.z()}},
        {"base_half_extents", {g.base_half_extents.x(), g.base_half_extents.y(), g.base_half_extents.z()}},
        {"swivel_pivot_x", g.swivel_pivot_x},
        {"neutral_column_height", g.neutral_column_height},
    };
}

CArmGeometry geometry_from_json(const nlohmann::json& j)
{
    CArmGeometry g;
    const auto vec = [](const nlohmann::json& a) {
        if (!a.is_array() || a.size() != 3) throw InvalidArgumentError("expected a 3-vector");
        return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
    };
    try {
        g.source_to_isocenter = j.value("source_to_isocenter", g.source_to_isocenter);
        g.source_to_detector = j.value("source_to_detector", g.source_to_detector);
        g.detector_width_px = j.value("detector_width_px", g.detector_width_px);
        g.detector_height_px = j.value("detector_height_px", g.detector_height_px);
        g.pixel_pitch = j.value("pixel_pitch", g.pixel_pitch);
        g.arc_tube_radius = j.value("arc_tube_radius", g.arc_tube_radius);
        g.arc_sweep_deg = j.value("arc_sweep_deg", g.arc_sweep_deg);
        if (j.contains("column_axis")) g.column_axis = vec(j["column_axis"]);
        g.column_radius = j.value("column_radius", g.column_radius);
        g.column_length = j.value("column_length", g.column_length);
        if (j.contains("base_center")) g.base_center = vec(j["base_center"]);
        if (j.contains("base_half_extents")) g.base_half_extents = vec(j["base_half_extents"]);
        g.swivel_pivot_x = j.value("swivel_pivot_x", g.swivel_pivot_x);
        g.neutral_column_height = j.value("neutral_column_height", g.neutral_column_height);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgumentError(std::string("bad C-arm geometry: ") + e.what());
    }
    g.validate();
    return g;
}

}  // namespace carm
