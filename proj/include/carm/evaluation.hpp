#pragma once

#include "carm/geometry.hpp"
#include "carm/kinematics.hpp"
#include "carm/view_registry.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace carm {

/// Log and scenario disagree (unknown run or view, missing target...).
class ScenarioMismatchError : public InvalidArgumentError {
public:
    using InvalidArgumentError::InvalidArgumentError;
};

enum class Arm { Conventional, Proposed };
std::string_view to_string(Arm arm);
Arm arm_from_string(std::string_view s);

struct StudyRun {
    int id = 0;
    std::vector<std::string> views;  ///< ordered preset labels
    std::vector<Arm> arm_order{Arm::Conventional, Arm::Proposed};
};

struct StudyScenario {
    std::vector<StudyRun> runs;
    std::map<std::string, CArmDofs> presets;  ///< label -> target DOFs
    std::set<int> excluded_runs;
    std::optional<double> reference_per_view_mean;  ///< published X-rays per view, compared in the summary
    std::vector<Keypoint3D> keypoints;              ///< phantom markers projected into X-rays

    const StudyRun& run(int id) const;
    /// Throws when a run has no views or a label has no preset.
    void validate() const;
};

/// Reads a scenario file. Labels without an explicit "presets" entry fall back
/// to preset_dofs(label, geom).
StudyScenario load_scenario(const std::filesystem::path& path, const CArmGeometry& geom = {});
StudyScenario scenario_from_json(const nlohmann::json& j, const CArmGeometry& geom = {});
nlohmann::json to_json(const StudyScenario& scenario);

enum class AcquisitionPurpose { Repositioning, Verification };

struct LogEvent {
    enum class Kind { Target, Acquisition, Final };
    Kind kind = Kind::Acquisition;
    int run = 0;
    Arm arm = Arm::Conventional;
    std::string view;
    double t = 0.0;
    CArmDofs dofs;
    AcquisitionPurpose purpose = AcquisitionPurpose::Repositioning;
    KeypointSet keypoints;
};

/// Chronologically ordered study events.
struct RunLog {
    std::vector<LogEvent> events;
};

nlohmann::json to_json(const LogEvent& e);
LogEvent log_event_from_json(const nlohmann::json& j);
/// JSON-lines; errors cite path and line.
RunLog load_run_log(const std::filesystem::path& path);
std::string to_json_lines(const RunLog& log);

struct PoseErrorStats {
    std::size_t n = 0;
    double mean_distance_mm = 0.0;
    double sd_distance_mm = 0.0;  ///< sample (n-1) SD; 0 for n = 1
    double mean_angle_deg = 0.0;
    double sd_angle_deg = 0.0;
};

/// pose_delta per (final, target) pair, then mean and sample SD.
PoseErrorStats pose_error_stats(const std::vector<std::pair<RigidTransform, RigidTransform>>& pairs);

/// Mean Euclidean pixel distance over the ids present in both sets.
double keypoint_displacement(const KeypointSet& a, const KeypointSet& b);

struct ViewResult {
    int run = 0;
    std::string view;
    Arm arm = Arm::Conventional;
    PoseDelta error;                     ///< final gantry pose vs target gantry pose
    std::optional<double> first_try_px;  ///< conventional: first acquisition
    std::optional<double> final_px;      ///< conventional: last acquisition; proposed: verification image
    int xray_count = 0;                  ///< repositioning acquisitions only
};

struct ArmSummary {
    std::size_t views = 0;
    std::optional<PoseErrorStats> pose;
    std::optional<double> mean_first_try_px;
    std::optional<double> mean_final_px;
    int total_xrays = 0;
    double xrays_per_view = 0.0;
};

struct StudyReport {
    std::vector<ViewResult> views;  ///< ordered by run, arm, view order within the run
    std::map<Arm, ArmSummary> arms;
    std::set<int> excluded_runs;
    std::optional<double> reference_per_view_mean;
    bool reference_mismatch = false;  ///< set when the exact conventional mean differs from the reference
    std::string ground_truth_source = "simulator state";
};

/// Per-view pose errors, keypoint displacements and X-ray counts for the
/// non-excluded runs. Throws ScenarioMismatchError naming the offending view.
StudyReport run_study(const StudyScenario& scenario, const RunLog& log, const CArmGeometry& geom = {});

/// Columns: run,view,arm,dist_mm,angle_deg,first_try_px,final_px,xray_count
std::string to_csv(const StudyReport& report);
nlohmann::json summary_json(const StudyReport& report);

}  // namespace carm
