#include "carm/icp.hpp"

#include "carm/io.hpp"

#include <Eigen/SVD>

#include <cmath>

namespace carm {

namespace {

struct Matching {
    std::vector<Vec3> src;  ///< transformed live points inside the gate
    std::vector<Vec3> dst;  ///< their nearest saved points
    double gated_rms = 0.0;
    double inlier_rms = 0.0;
};

Matching match(const std::vector<Vec3>& live, const RigidTransform& t, const KdTree& index, double gate)
{
    Matching m;
    m.src.reserve(live.size());
    m.dst.reserve(live.size());
    const double gate2 = gate * gate;
    double gated_sum = 0.0;
    double inlier_sum = 0.0;
    for (const auto& p : live) {
        const Vec3 q = t.apply(p);
        const NearestNeighbor nn = index.nearest(q);
        const double d2 = nn.distance * nn.distance;
        if (nn.distance <= gate) {
            m.src.push_back(q);
            m.dst.push_back(nn.point);
            inlier_sum += d2;
            gated_sum += d2;
        } else {
            gated_sum += gate2;
        }
    }
    m.gated_rms = std::sqrt(gated_sum / static_cast<double>(live.size()));
    m.inlier_rms = m.src.empty() ? 0.0 : std::sqrt(inlier_sum / static_cast<double>(m.src.size()));
    return m;
}

void require_overlap(const Matching& m, const IcpParams& params, int iteration)
{
    if (m.src.size() < params.min_correspondences)
        throw InsufficientOverlapError("insufficient overlap: " + std::to_string(m.src.size()) +
                                       " correspondences within " +
                                       std::to_string(params.max_correspondence_distance) + " mm at iteration " +
                                       std::to_string(iteration) + " (need " +
                                       std::to_string(params.min_correspondences) + ")");
}

}  // namespace

void IcpParams::validate() const
{
    if (max_iterations <= 0 || !(rms_delta_threshold > 0.0) || !(max_correspondence_distance > 0.0) ||
        min_correspondences == 0)
        throw InvalidArgumentError("ICP parameters must all be positive");
}

RigidTransform fit_rigid(std::span<const Vec3> src, std::span<const Vec3> dst)
{
    if (src.size() != dst.size() || src.empty()) throw InvalidArgumentError("fit_rigid needs matched, non-empty sets");
    const double n = static_cast<double>(src.size());
    Vec3 src_mean = Vec3::Zero(), dst_mean = Vec3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
        src_mean += src[i];
        dst_mean += dst[i];
    }
    src_mean /= n;
    dst_mean /= n;

    Mat3 cov = Mat3::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) cov.noalias() += (src[i] - src_mean) * (dst[i] - dst_mean).transpose();

    const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 correction = Mat3::Identity();
    if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) correction(2, 2) = -1.0;
    const Mat3 r = svd.matrixV() * correction * svd.matrixU().transpose();
    return {r, dst_mean - r * src_mean};
}

AlignmentReport icp_align(const TaggedPointCloud& live, const TaggedPointCloud& saved, const IcpParams& params)
{
    if (live.frame != saved.frame)
        throw FrameMismatchError("icp_align: live cloud is in " + std::string(to_string(live.frame)) +
                                 ", saved cloud in " + std::string(to_string(saved.frame)));
    require_valid(saved, "icp_align saved cloud");
    return icp_align(live, KdTree(saved), saved.frame, params);
}

AlignmentReport icp_align(const TaggedPointCloud& live, const KdTree& saved_index, Frame saved_frame,
                          const IcpParams& params)
{
    params.validate();
    if (live.frame != saved_frame)
        throw FrameMismatchError("icp_align: live cloud is in " + std::string(to_string(live.frame)) +
                                 ", saved cloud in " + std::string(to_string(saved_frame)));
    require_valid(live, "icp_align live cloud");
    if (saved_index.empty()) throw InvalidArgumentError("icp_align: saved cloud is empty");

    AlignmentReport report;
    RigidTransform current;
    Matching m = match(live.points, current, saved_index, params.max_correspondence_distance);
    require_overlap(m, params, 0);
    report.rms_history.push_back(m.gated_rms);

    for (int iter = 1; iter <= params.max_iterations; ++iter) {
        const RigidTransform candidate = fit_rigid(m.src, m.dst) * current;
        Matching next = match(live.points, candidate, saved_index, params.max_correspondence_distance);
        require_overlap(next, params, iter);

        const double change = m.gated_rms - next.gated_rms;
        if (change < 0.0) {
            // Only round-off can raise the gated objective; keep the better pose.
            report.converged = -change < params.rms_delta_threshold;
            break;
        }
        current = candidate;
        m = std::move(next);
        report.iterations = iter;
        report.rms_history.push_back(m.gated_rms);
        if (change < params.rms_delta_threshold) {
            report.converged = true;
            break;
        }
    }

    report.delta = current;
    report.rms = m.gated_rms;
    report.inlier_rms = m.inlier_rms;
    report.correspondences = m.src.size();
    return report;
}

std::string_view to_string(AlignmentBand band)
{
    switch (band) {
    case AlignmentBand::Green: return "green";
    case AlignmentBand::Amber: return "amber";
    case AlignmentBand::Red: return "red";
    }
    return "red";
}

AlignmentBand classify(const PoseDelta& d, const BandingThresholds& t)
{
    if (d.distance_mm <= t.green_mm && d.angle_deg <= t.green_deg) return AlignmentBand::Green;
    if (d.distance_mm <= t.amber_mm && d.angle_deg <= t.amber_deg) return AlignmentBand::Amber;
    return AlignmentBand::Red;
}

AlignmentBand classify(const AlignmentReport& report, const BandingThresholds& t)
{
    return classify(pose_delta(RigidTransform::identity(), report.delta), t);
}

nlohmann::json to_json(const AlignmentReport& r, const BandingThresholds& t)
{
    const PoseDelta size = pose_delta(RigidTransform::identity(), r.delta);
    nlohmann::json j{
        {"delta", transform_to_matrix_json(r.delta)},
        {"distance_mm", size.distance_mm},
        {"angle_deg", size.angle_deg},
        {"rms_mm", r.rms},
        {"inlier_rms_mm", r.inlier_rms},
        {"iterations", r.iterations},
        {"converged", r.converged},
        {"correspondences", r.correspondences},
        {"band", std::string(to_string(classify(size, t)))},
        {"band_is_clinical", false},
    };
    if (r.dof_hints) {
        nlohmann::json inc = nlohmann::json::object();
        for (std::size_t i = 0; i < kDofCount; ++i) inc[std::string(kDofNames[i])] = r.dof_hints->increments[i];
        j["dof_hints"] = {{"reliable", r.dof_hints->reliable},
                          {"increments", inc},
                          {"condition_number", r.dof_hints->condition_number},
                          {"reason", r.dof_hints->reason}};
    }
    return j;
}

nlohmann::json to_json(const IcpParams& p)
{
    return {{"max_iterations", p.max_iterations},
            {"rms_delta_threshold", p.rms_delta_threshold},
            {"max_correspondence_distance", p.max_correspondence_distance},
            {"min_correspondences", p.min_correspondences}};
}

IcpParams icp_params_from_json(const nlohmann::json& j)
{
    IcpParams p;
    try {
        p.max_iterations = j.value("max_iterations", p.max_iterations);
        p.rms_delta_threshold = j.value("rms_delta_threshold", p.rms_delta_threshold);
        p.max_correspondence_distance = j.value("max_correspondence_distance", p.max_correspondence_distance);
        p.min_correspondences = j.value("min_correspondences", p.min_correspondences);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidArgumentError(std::string("bad ICP parameters: ") + e.what());
    }
    p.validate();
    return p;
}

}  // namespace carm
