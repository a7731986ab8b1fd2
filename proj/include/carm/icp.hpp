#pragma once

#include "carm/geometry.hpp"
#include "carm/kdtree.hpp"
#include "carm/kinematics.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace carm {

class InsufficientOverlapError : public Error {
public:
    using Error::Error;
};

struct IcpParams {
    int max_iterations = 50;
    double rms_delta_threshold = 1e-4;         ///< mm
    double max_correspondence_distance = 150.0; ///< mm
    std::size_t min_correspondences = 100;

    void validate() const;
};

struct AlignmentReport {
    RigidTransform delta;             ///< maps the live cloud onto the saved one
    /// Gated RMS: sqrt(mean over live points of min(d^2, gate^2)). This is the
    /// objective ICP minimises and is non-increasing over accepted iterations.
    double rms = 0.0;
    double inlier_rms = 0.0;          ///< RMS over pairs inside the gate
    int iterations = 0;
    bool converged = false;
    std::size_t correspondences = 0;
    std::vector<double> rms_history;  ///< gated RMS before the first and after every accepted iteration
    std::optional<DofHint> dof_hints;
};

/// Least-squares rigid transform T minimising sum |T src_i - dst_i|^2 (SVD of
/// the cross-covariance, reflection corrected).
RigidTransform fit_rigid(std::span<const Vec3> src, std::span<const Vec3> dst);

/// Point-to-point ICP from the identity. Both clouds must share a frame.
/// Throws InsufficientOverlapError when fewer than min_correspondences pairs
/// fall inside the gate at any iteration.
AlignmentReport icp_align(const TaggedPointCloud& live, const TaggedPointCloud& saved, const IcpParams& params = {});
AlignmentReport icp_align(const TaggedPointCloud& live, const KdTree& saved_index, Frame saved_frame,
                          const IcpParams& params = {});

enum class AlignmentBand { Green, Amber, Red };
std::string_view to_string(AlignmentBand band);

/// Display banding only; the thresholds carry no clinical meaning.
struct BandingThresholds {
    double green_mm = 5.0;
    double green_deg = 1.0;
    double amber_mm = 20.0;
    double amber_deg = 3.0;
};

AlignmentBand classify(const PoseDelta& delta, const BandingThresholds& thresholds = {});
AlignmentBand classify(const AlignmentReport& report, const BandingThresholds& thresholds = {});

nlohmann::json to_json(const AlignmentReport& report, const BandingThresholds& thresholds = {});
nlohmann::json to_json(const IcpParams& params);
IcpParams icp_params_from_json(const nlohmann::json& j);

}  // namespace carm
