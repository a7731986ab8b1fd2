#include "carm/view_registry.hpp"

#include "carm/io.hpp"

#include <spdlog/spdlog.h>

#include <cstdio>

namespace carm {

namespace {

std::string cloud_file_name(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "view_%03zu.ply", index);
    return buf;
}

nlohmann::json keypoints_to_json(const KeypointSet& kps)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [id, px] : kps) j[id] = {px.x(), px.y()};
    return j;
}

KeypointSet keypoints_from_json(const nlohmann::json& j)
{
    KeypointSet out;
    for (const auto& [id, px] : j.items()) {
        if (!px.is_array() || px.size() != 2) throw ParseError("keypoint '" + id + "' must be [u, v]");
        out[id] = Eigen::Vector2d(px[0].get<double>(), px[1].get<double>());
    }
    return out;
}

}  // namespace

SaveResult ViewRegistry::save_view(const std::string& name, const TaggedPointCloud& sensor_cloud,
                                   const RigidTransform& tracker_pose, const RigidTransform& ir_extrinsic,
                                   double t0, std::optional<KeypointSet> reference_keypoints)
{
    if (sensor_cloud.frame != Frame::IRSensor)
        throw FrameMismatchError("save_view expects an IRSensor cloud, got " +
                                 std::string(to_string(sensor_cloud.frame)));
    require_valid(sensor_cloud, "save_view '" + name + "'");

    const FrameTransform world_from_technician{tracker_pose, Frame::World, Frame::Technician};
    const FrameTransform technician_from_sensor{ir_extrinsic, Frame::Technician, Frame::IRSensor};

    SavedView view;
    view.name = name;
    view.t0 = t0;
    view.world_cloud = transform_cloud(compose(world_from_technician, technician_from_sensor), sensor_cloud);
    view.world_cloud.timestamp = t0;
    view.tracker_pose = tracker_pose;
    view.ir_extrinsic = ir_extrinsic;
    view.reference_keypoints = std::move(reference_keypoints);

    const bool replaced = contains(name);
    if (replaced) spdlog::warn("view '{}' already saved; replacing it", name);
    auto& slot = views_[name] = std::move(view);
    return {&slot, replaced};
}

TaggedPointCloud ViewRegistry::show_view(const std::string& name, const RigidTransform& current_tracker_pose) const
{
    const SavedView& view = get(name);
    const FrameTransform technician_from_world{current_tracker_pose.inverse(), Frame::Technician, Frame::World};
    return transform_cloud(technician_from_world, view.world_cloud);
}

const SavedView& ViewRegistry::get(const std::string& name) const
{
    const auto it = views_.find(name);
    if (it == views_.end()) throw UnknownViewError("no saved view named '" + name + "'");
    return it->second;
}

std::vector<std::string> ViewRegistry::names() const
{
    std::vector<std::string> out;
    out.reserve(views_.size());
    for (const auto& [name, _] : views_) out.push_back(name);
    return out;
}

void ViewRegistry::insert(SavedView view)
{
    if (view.world_cloud.frame != Frame::World) throw FrameMismatchError("stored views must be in World");
    require_valid(view.world_cloud, "view '" + view.name + "'");
    const std::string key = view.name;
    views_[key] = std::move(view);
}

void persist(const ViewRegistry& registry, const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

    nlohmann::json entries = nlohmann::json::array();
    std::size_t index = 0;
    for (const auto& [name, view] : registry.views()) {
        const std::string file = cloud_file_name(index++);
        write_ply(dir / file, view.world_cloud);
        nlohmann::json entry{
            {"name", name},
            {"t0", view.t0},
            {"world_from_sensor", transform_to_matrix_json(view.world_from_sensor())},
            {"cloud_file", file},
            {"point_count", view.world_cloud.size()},
            {"tracker_pose", transform_to_json(view.tracker_pose)},
            {"ir_extrinsic", transform_to_json(view.ir_extrinsic)},
        };
        if (view.reference_keypoints) entry["reference_keypoints"] = keypoints_to_json(*view.reference_keypoints);
        entries.push_back(std::move(entry));
    }
    const nlohmann::json manifest{{"version", 1}, {"views", entries}};
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

ViewRegistry load_registry(const std::filesystem::path& dir)
{
    const auto manifest_path = dir / "manifest.json";
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_text_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(manifest_path.string() + ": " + e.what());
    }

    ViewRegistry registry;
    if (!manifest.contains("views") || !manifest["views"].is_array())
        throw ParseError(manifest_path.string() + ": missing 'views' array");
    for (const auto& entry : manifest["views"]) {
        std::string name = "<unnamed>";
        try {
            name = entry.at("name").get<std::string>();
            SavedView view;
            view.name = name;
            view.t0 = entry.at("t0").get<double>();
            view.tracker_pose = transform_from_json(entry.at("tracker_pose"));
            view.ir_extrinsic = transform_from_json(entry.at("ir_extrinsic"));
            if (entry.contains("reference_keypoints"))
                view.reference_keypoints = keypoints_from_json(entry["reference_keypoints"]);
            view.world_cloud = read_ply(dir / entry.at("cloud_file").get<std::string>());
            view.world_cloud.timestamp = view.t0;
            const auto expected = entry.at("point_count").get<std::size_t>();
            if (view.world_cloud.size() != expected)
                throw ParseError("point count " + std::to_string(view.world_cloud.size()) + " != manifest " +
                                 std::to_string(expected));
            registry.insert(std::move(view));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("view '" + name + "': " + e.what());
        } catch (const Error& e) {
            throw ParseError("view '" + name + "': " + e.what());
        }
    }
    return registry;
}

}  // namespace carm
