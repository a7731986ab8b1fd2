#include "carm/hmd_tracker.hpp"

#include "carm/io.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_map>

namespace carm {

namespace {

Mat3 skew(const Vec3& v)
{
    Mat3 m;
    m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return m;
}

struct Correspondence {
    Vec3 world;
    Eigen::Vector2d observed;
};

// Sum of squared residuals; +inf if any landmark falls behind the camera.
double total_cost(const RigidTransform& camera_from_world, const std::vector<Correspondence>& corr,
                  const CameraIntrinsics& k)
{
    double cost = 0.0;
    for (const auto& c : corr) {
        const Vec3 pc = camera_from_world.apply(c.world);
        if (!(pc.z() > 1e-9)) return std::numeric_limits<double>::infinity();
        cost += (k.project(pc) - c.observed).squaredNorm();
    }
    return cost;
}

template <class Fn>
void read_json_lines(const std::filesystem::path& path, Fn&& each)
{
    std::istringstream in(read_text_file(path));
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            each(nlohmann::json::parse(line));
        } catch (const std::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

}  // namespace

std::string_view to_string(SolveStatus status)
{
    switch (status) {
    case SolveStatus::AlreadyOptimal: return "already_optimal";
    case SolveStatus::SmallStep: return "small_step";
    case SolveStatus::SmallCostChange: return "small_cost_change";
    case SolveStatus::MaxIterations: return "max_iterations";
    case SolveStatus::DampingExhausted: return "damping_exhausted";
    }
    return "unknown";
}

Eigen::Vector2d project_feature(const RigidTransform& pose, const Landmark& landmark, const CameraIntrinsics& k)
{
    const Vec3 pc = pose.inverse().apply(landmark.position);
    if (!(pc.z() > 0.0))
        throw BehindCameraError("landmark '" + landmark.id + "' has non-positive depth " + std::to_string(pc.z()));
    return k.project(pc);
}

RigidTransform perturb_left(const RigidTransform& camera_from_world, const Eigen::Matrix<double, 6, 1>& xi)
{
    return RigidTransform::from_rotation_vector(xi.head<3>(), xi.tail<3>()) * camera_from_world;
}

ResidualBlock reprojection_residual(const RigidTransform& camera_from_world, const Vec3& landmark,
                                    const Eigen::Vector2d& observed, const CameraIntrinsics& k)
{
    const Vec3 pc = camera_from_world.apply(landmark);
    if (!(pc.z() > 0.0)) throw BehindCameraError("landmark behind camera during linearisation");
    const double iz = 1.0 / pc.z();
    Eigen::Matrix<double, 2, 3> dproj;
    dproj << k.fx * iz, 0.0, -k.fx * pc.x() * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y() * iz * iz;
    Eigen::Matrix<double, 3, 6> dpoint;
    dpoint.leftCols<3>() = -skew(pc);
    dpoint.rightCols<3>() = Mat3::Identity();

    ResidualBlock block;
    block.residual = k.project(pc) - observed;
    block.jacobian = dproj * dpoint;
    return block;
}

TrackerEstimate solve_pose(const std::vector<Landmark>& landmarks,
                           const std::vector<FeatureObservation>& observations, const CameraIntrinsics& k,
                           const RigidTransform& initial_guess, const SolverOptions& options)
{
    std::unordered_map<std::string, const Landmark*> by_id;
    for (const auto& lm : landmarks) by_id.emplace(lm.id, &lm);
    std::vector<Correspondence> corr;
    for (const auto& obs : observations)
        if (auto it = by_id.find(obs.landmark_id); it != by_id.end())
            corr.push_back({it->second->position, obs.pixel});
    if (corr.size() < 4)
        throw UnderdeterminedError("pose needs at least 4 landmark correspondences, got " +
                                   std::to_string(corr.size()));

    TrackerEstimate est;
    RigidTransform cam = initial_guess.inverse();
    double cost = total_cost(cam, corr, k);
    if (!std::isfinite(cost))
        throw InvalidArgumentError("initial guess places a landmark behind the camera");
    est.cost_history.push_back(cost);

    const auto finish = [&](SolveStatus status, bool converged, double lambda) {
        est.pose = cam.inverse();
        est.rms_px = std::sqrt(cost / static_cast<double>(corr.size()));
        est.status = status;
        est.converged = converged;
        est.final_lambda = lambda;
        return est;
    };

    if (cost == 0.0) return finish(SolveStatus::AlreadyOptimal, true, options.initial_lambda);

    double lambda = options.initial_lambda;
    for (int iter = 1; iter <= options.max_iterations; ++iter) {
        est.iterations = iter;
        Eigen::Matrix<double, 6, 6> hessian = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> gradient = Eigen::Matrix<double, 6, 1>::Zero();
        for (const auto& c : corr) {
            const ResidualBlock b = reprojection_residual(cam, c.world, c.observed, k);
            hessian.noalias() += b.jacobian.transpose() * b.jacobian;
            gradient.noalias() += b.jacobian.transpose() * b.residual;
        }

        while (true) {
            Eigen::Matrix<double, 6, 6> damped = hessian;
            damped.diagonal() += lambda * hessian.diagonal();
            const Eigen::Matrix<double, 6, 1> step = damped.ldlt().solve(-gradient);
            if (step.norm() < options.step_tolerance) return finish(SolveStatus::SmallStep, true, lambda);

            const RigidTransform candidate = perturb_left(cam, step);
            const double new_cost = total_cost(candidate, corr, k);
            if (new_cost < cost) {
                const double change = cost - new_cost;
                cam = candidate;
                cost = new_cost;
                est.cost_history.push_back(cost);
                lambda *= options.lambda_down;
                if (change < options.cost_change_tolerance)
                    return finish(SolveStatus::SmallCostChange, true, lambda);
                break;
            }
            lambda *= options.lambda_up;
            if (lambda > options.max_lambda) return finish(SolveStatus::DampingExhausted, false, lambda);
        }
    }
    return finish(SolveStatus::MaxIterations, false, lambda);
}

std::vector<FeatureObservation> observe_landmarks(const std::vector<Landmark>& landmarks, const RigidTransform& pose,
                                                  const CameraIntrinsics& k, double timestamp)
{
    const RigidTransform cam = pose.inverse();
    std::vector<FeatureObservation> out;
    for (const auto& lm : landmarks) {
        const Vec3 pc = cam.apply(lm.position);
        if (pc.z() <= 1.0) continue;
        const Eigen::Vector2d px = k.project(pc);
        if (px.x() < 0.0 || px.y() < 0.0 || px.x() >= k.width || px.y() >= k.height) continue;
        out.push_back({lm.id, px, timestamp});
    }
    return out;
}

std::vector<Landmark> load_landmarks(const std::filesystem::path& path)
{
    std::vector<Landmark> out;
    read_json_lines(path, [&](const nlohmann::json& j) {
        out.push_back({j.at("id").get<std::string>(), vec3_from_json(j.at("position"))});
    });
    return out;
}

std::vector<FeatureObservation> load_observations(const std::filesystem::path& path)
{
    std::vector<FeatureObservation> out;
    read_json_lines(path, [&](const nlohmann::json& j) {
        const auto& px = j.at("pixel");
        if (!px.is_array() || px.size() != 2) throw ParseError("pixel must be [u, v]");
        out.push_back({j.at("landmark").get<std::string>(),
                       Eigen::Vector2d(px[0].get<double>(), px[1].get<double>()), j.value("t", 0.0)});
    });
    return out;
}

}  // namespace carm
