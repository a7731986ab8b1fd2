#pragma once

#include "carm/depth_sensor.hpp"
#include "carm/geometry.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <string>
#include <vector>

namespace carm {

class UnderdeterminedError : public InvalidArgumentError {
public:
    using InvalidArgumentError::InvalidArgumentError;
};

class BehindCameraError : public InvalidArgumentError {
public:
    using InvalidArgumentError::InvalidArgumentError;
};

struct Landmark {
    std::string id;
    Vec3 position;  ///< World, mm
};

struct FeatureObservation {
    std::string landmark_id;
    Eigen::Vector2d pixel;
    double timestamp = 0.0;
};

enum class SolveStatus { AlreadyOptimal, SmallStep, SmallCostChange, MaxIterations, DampingExhausted };

std::string_view to_string(SolveStatus status);

struct TrackerEstimate {
    RigidTransform pose;  ///< World <- Technician
    double rms_px = 0.0;  ///< sqrt(mean squared pixel distance)
    int iterations = 0;
    bool converged = false;
    SolveStatus status = SolveStatus::MaxIterations;
    double final_lambda = 0.0;
    std::vector<double> cost_history;  ///< cost after every accepted step, starting with the initial cost
};

struct SolverOptions {
    int max_iterations = 100;
    double step_tolerance = 1e-10;
    double cost_change_tolerance = 1e-8;
    double initial_lambda = 1e-3;
    double lambda_up = 10.0;
    double lambda_down = 0.1;
    double max_lambda = 1e12;
};

/// Pinhole projection of a landmark under `pose` (World <- camera).
/// Throws BehindCameraError for non-positive camera-frame depth.
Eigen::Vector2d project_feature(const RigidTransform& pose, const Landmark& landmark,
                                const CameraIntrinsics& intrinsics);

/// Reprojection residual (predicted - observed) and its 2x6 Jacobian with
/// respect to a left perturbation exp([omega; v]) of the camera-from-world
/// transform.
struct ResidualBlock {
    Eigen::Vector2d residual;
    Eigen::Matrix<double, 2, 6> jacobian;
};

ResidualBlock reprojection_residual(const RigidTransform& camera_from_world, const Vec3& landmark,
                                    const Eigen::Vector2d& observed, const CameraIntrinsics& intrinsics);

/// Applies a left perturbation to camera-from-world.
RigidTransform perturb_left(const RigidTransform& camera_from_world, const Eigen::Matrix<double, 6, 1>& xi);

/// Levenberg-Marquardt on the summed squared reprojection error.
/// Throws UnderdeterminedError with fewer than four matched landmarks.
TrackerEstimate solve_pose(const std::vector<Landmark>& landmarks,
                           const std::vector<FeatureObservation>& observations,
                           const CameraIntrinsics& intrinsics, const RigidTransform& initial_guess,
                           const SolverOptions& options = {});

/// Observations of every landmark in front of the camera and inside the image.
std::vector<FeatureObservation> observe_landmarks(const std::vector<Landmark>& landmarks,
                                                  const RigidTransform& pose,
                                                  const CameraIntrinsics& intrinsics, double timestamp = 0.0);

/// JSON-lines: {"id":..., "position":[x,y,z]} per line.
std::vector<Landmark> load_landmarks(const std::filesystem::path& path);
/// JSON-lines: {"landmark":..., "pixel":[u,v], "t":...} per line.
std::vector<FeatureObservation> load_observations(const std::filesystem::path& path);

}  // namespace carm
