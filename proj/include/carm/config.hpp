#pragma once

#include "carm/depth_sensor.hpp"
#include "carm/hmd_tracker.hpp"
#include "carm/icp.hpp"
#include "carm/kinematics.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carm {

/// Environment variable naming a config file when no --config flag is given.
inline constexpr const char* kConfigEnvVar = "CARM_AR_CONFIG";

struct SessionConfig {
    CArmGeometry geometry;
    CameraIntrinsics depth_intrinsics;
    CameraIntrinsics tracking_intrinsics{400.0, 400.0, 320.0, 240.0, 640, 480};
    RigidTransform ir_extrinsic = RigidTransform::from_translation(0.0, 0.0, 40.0);  ///< Technician <- IRSensor
    RigidTransform initial_tracker_pose;                                              ///< World <- Technician
    IcpParams icp;
    BandingThresholds banding;
    HintOptions hints;
    std::map<std::string, CArmDofs> presets;  ///< extra or overriding named presets
    std::vector<Landmark> landmarks;          ///< World-anchored features seen by the tracking camera
    std::vector<Keypoint3D> keypoints;        ///< phantom markers projected into X-rays
    double depth_noise_mm = 0.0;
    double pixel_noise_px = 0.0;
    std::size_t max_snapshot_points = 20000;
    std::uint64_t seed = 1;

    void validate() const;
    CArmDofs preset(const std::string& name) const;
};

/// Defaults: room-scale landmark grid, technician about 2.3 m from the
/// isocenter facing the C-arm, four phantom keypoints near the isocenter.
SessionConfig default_config();

/// Missing keys keep their defaults; unknown top-level keys are rejected.
SessionConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SessionConfig& config);
SessionConfig load_config(const std::filesystem::path& path);

/// Explicit path, else $CARM_AR_CONFIG, else defaults.
SessionConfig resolve_config(const std::optional<std::filesystem::path>& explicit_path);

nlohmann::json to_json(const BandingThresholds& b);
BandingThresholds banding_from_json(const nlohmann::json& j);

}  // namespace carm
