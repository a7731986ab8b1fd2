#pragma once

#include "carm/geometry.hpp"

#include <Eigen/Core>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace carm {

class UnknownViewError : public Error {
public:
    using Error::Error;
};

/// Keypoint id -> detector pixel (u, v).
using KeypointSet = std::map<std::string, Eigen::Vector2d>;

/// A C-arm configuration stored as a World-frame point cloud.
struct SavedView {
    std::string name;
    double t0 = 0.0;                 ///< calibration time
    TaggedPointCloud world_cloud;    ///< frame == World
    RigidTransform tracker_pose;     ///< World <- Technician at t0
    RigidTransform ir_extrinsic;     ///< Technician <- IRSensor
    std::optional<KeypointSet> reference_keypoints;

    /// World <- IRSensor at t0.
    RigidTransform world_from_sensor() const { return tracker_pose * ir_extrinsic; }
};

struct SaveResult {
    const SavedView* view = nullptr;
    bool replaced = false;
};

/// Name -> SavedView, ordered by name. Single writer.
class ViewRegistry {
public:
    /// Maps a sensor-frame cloud through IRSensor -> Technician -> World and
    /// stores it. A duplicate name replaces the old view and logs a warning.
    SaveResult save_view(const std::string& name, const TaggedPointCloud& sensor_cloud,
                         const RigidTransform& tracker_pose, const RigidTransform& ir_extrinsic, double t0,
                         std::optional<KeypointSet> reference_keypoints = std::nullopt);

    /// The stored cloud re-expressed in the current Technician frame.
    TaggedPointCloud show_view(const std::string& name, const RigidTransform& current_tracker_pose) const;

    const SavedView& get(const std::string& name) const;
    bool contains(const std::string& name) const { return views_.count(name) != 0; }
    std::size_t size() const { return views_.size(); }
    bool empty() const { return views_.empty(); }
    std::vector<std::string> names() const;

    const std::map<std::string, SavedView>& views() const { return views_; }

    /// Inserts an already world-mapped view (used by load).
    void insert(SavedView view);

private:
    std::map<std::string, SavedView> views_;
};

/// Writes `<dir>/manifest.json` and one `<dir>/view_<k>.ply` per view.
void persist(const ViewRegistry& registry, const std::filesystem::path& dir);
ViewRegistry load_registry(const std::filesystem::path& dir);

}  // namespace carm
