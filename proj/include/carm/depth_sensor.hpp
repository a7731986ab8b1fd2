#pragma once

#include "carm/geometry.hpp"
#include "carm/primitives.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace carm {

/// Pinhole intrinsics in pixels.
struct CameraIntrinsics {
    double fx = 360.0;
    double fy = 360.0;
    double cx = 160.0;
    double cy = 144.0;
    int width = 320;
    int height = 288;

    void validate() const;
    /// Projects a camera-frame point (z > 0 assumed).
    Eigen::Vector2d project(const Vec3& p_camera) const;
    /// Unit-z ray through pixel (u, v): ((u-cx)/fx, (v-cy)/fy, 1).
    Vec3 ray(double u, double v) const;
};

/// World <- camera pose for a camera at `eye` looking at `target`, with image
/// x to the right and y down (camera +z forward). `up` must not be parallel to
/// the viewing direction.
RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

/// Depth in mm along the optical axis per pixel; 0 means no return.
struct DepthImage {
    CameraIntrinsics intrinsics;
    std::vector<double> depth;  ///< row-major, width * height
    double timestamp = 0.0;

    DepthImage() = default;
    explicit DepthImage(const CameraIntrinsics& k, double t = 0.0);

    double at(int u, int v) const { return depth[static_cast<std::size_t>(v) * intrinsics.width + u]; }
    double& at(int u, int v) { return depth[static_cast<std::size_t>(v) * intrinsics.width + u]; }
    std::size_t valid_count() const;
};

struct RenderOptions {
    double noise_sigma_mm = 0.0;
    std::uint64_t seed = 0;
    double timestamp = 0.0;
};

/// Ray-casts analytic primitives; each pixel keeps the nearest hit.
/// `camera_pose` is World <- IRSensor.
DepthImage render_depth(const SurfaceModel& scene, const RigidTransform& camera_pose,
                        const CameraIntrinsics& intrinsics, const RenderOptions& options = {});

/// Splats a World-frame point cloud into a z-buffer (nearest depth wins).
DepthImage render_depth(const TaggedPointCloud& scene, const RigidTransform& camera_pose,
                        const CameraIntrinsics& intrinsics, const RenderOptions& options = {});

/// (u, v, d) -> ((u-cx) d / fx, (v-cy) d / fy, d); zero pixels are skipped.
TaggedPointCloud unproject_depth(const DepthImage& image);

/// Idealised noiseless point sensor: the scene points re-expressed in the
/// IRSensor frame, optionally restricted to the view frustum.
TaggedPointCloud sense_points(const TaggedPointCloud& scene, const RigidTransform& camera_pose,
                              const CameraIntrinsics& intrinsics, bool cull_to_frustum = false);

/// 16-bit PGM (P5, big-endian samples) with depth in 0.1 mm units, plus a JSON
/// sidecar `<path>.json` holding the intrinsics and timestamp.
void write_depth_pgm(const std::filesystem::path& path, const DepthImage& image);
DepthImage read_depth_pgm(const std::filesystem::path& path);

nlohmann::json to_json(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_json(const nlohmann::json& j);

}  // namespace carm
