#pragma once

#include "carm/config.hpp"
#include "carm/icp.hpp"
#include "carm/view_registry.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carm {

/// Malformed command: unknown verb, bad or unexpected arguments.
class CommandError : public InvalidArgumentError {
public:
    using InvalidArgumentError::InvalidArgumentError;
};

enum class Verb {
    SaveView,
    ShowView,
    HideView,
    ToggleLive,
    SetDofs,
    AdjustDof,
    AcquireXray,
    RequestAlignment,
    ResetNeutral,
    SetTrackerPose,
};
std::string_view to_string(Verb verb);
std::optional<Verb> verb_from_string(std::string_view s);

struct Command {
    Verb verb = Verb::ResetNeutral;
    nlohmann::json args = nlohmann::json::object();
    std::string request_id;
    std::string client_id;
};

/// {"type":"cmd","verb":...,"args":{...},"request_id":...,"client":...}
nlohmann::json to_json(const Command& cmd);
/// Checks the envelope and the per-verb argument schema. Throws CommandError.
Command command_from_json(const nlohmann::json& j);

struct Reply {
    std::string request_id;
    bool ok = false;
    nlohmann::json data;  ///< null on error
    std::string error;
};
/// {"type":"reply","request_id":...,"ok":true,"data":{...}} or {...,"ok":false,"error":"..."}
nlohmann::json to_json(const Reply& reply);

struct AcquisitionRecord {
    std::uint64_t sequence = 0;
    std::string view;
    std::string purpose;  ///< "repositioning" or "verification"
    CArmDofs dofs;
    KeypointSet keypoints;
};

struct SessionState {
    std::uint64_t sequence = 0;
    CArmDofs dofs;
    RigidTransform tracker_truth;  ///< World <- Technician, simulator ground truth
    RigidTransform tracker_pose;   ///< World <- Technician, as estimated by the HMD tracker
    double tracker_rms_px = 0.0;
    std::optional<std::string> shown_view;
    bool live_visible = true;
    ViewRegistry registry;
    std::map<std::string, CArmDofs> saved_dofs;  ///< ground-truth DOFs at save time
    std::map<std::string, int> xray_counts;
    std::vector<AcquisitionRecord> acquisitions;
    std::optional<AlignmentReport> alignment;
    std::optional<std::string> alignment_view;
};

struct Outcome {
    Reply reply;
    bool mutated = false;             ///< false for rejected commands
    nlohmann::json events = nlohmann::json::array();
};

/// Single-writer session state machine. Commands are applied atomically: a
/// rejected command leaves the state untouched and the sequence unchanged.
class SessionEngine {
public:
    explicit SessionEngine(SessionConfig config);

    Outcome handle(const Command& cmd);

    const SessionState& state() const { return state_; }
    const SessionConfig& config() const { return config_; }

    /// IRSensor-frame depth cloud of the C-arm as the HMD currently sees it.
    const TaggedPointCloud& live_cloud_sensor() const;
    /// The live cloud in the Technician frame (what the HMD overlays).
    TaggedPointCloud live_cloud_technician() const;
    /// The shown view in the Technician frame at the current tracker estimate.
    std::optional<TaggedPointCloud> shown_cloud_technician() const;

    /// StateSnapshot JSON with clouds decimated to config().max_snapshot_points.
    nlohmann::json snapshot(const nlohmann::json& events = nlohmann::json::array()) const;

private:
    nlohmann::json apply(const Command& cmd, nlohmann::json& events);
    void update_tracker(const RigidTransform& truth);
    KeypointSet project_keypoints(const CArmDofs& dofs) const;

    SessionConfig config_;
    SessionState state_;
    mutable std::optional<std::pair<std::uint64_t, TaggedPointCloud>> live_cache_;
};

/// Evenly strided subset of at most `max_points` points.
std::vector<Vec3> decimate(const std::vector<Vec3>& points, std::size_t max_points);

/// Appends every command as one JSON line and flushes.
class CommandRecorder {
public:
    explicit CommandRecorder(const std::filesystem::path& path);
    void record(const Command& cmd);

private:
    std::ofstream out_;
    std::filesystem::path path_;
};

/// Re-applies a recorded command log. Malformed lines raise ParseError citing
/// `<source>:<line>`; rejected commands are re-rejected exactly as recorded.
void replay_commands(SessionEngine& engine, std::istream& in, const std::string& source_name);
void replay_log(SessionEngine& engine, const std::filesystem::path& path);

/// Per saved view: view,xray_count,dist_mm,angle_deg,final_px where the pose
/// and keypoint errors compare the last acquisition against the save-time state.
std::string view_report_csv(const SessionEngine& engine);

}  // namespace carm
