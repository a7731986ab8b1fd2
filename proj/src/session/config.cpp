#include "carm/config.hpp"

#include "carm/io.hpp"

#include <cstdlib>
#include <set>

namespace carm {

namespace {

std::vector<Landmark> default_landmarks()
{
    // Walls of an 8 m x 8 m room and its ceiling, 1 m grid. The floor sits at z = -1000.
    std::vector<Landmark> out;
    const auto add = [&](const Vec3& p) { out.push_back({"L" + std::to_string(out.size()), p}); };
    for (int a = -4; a <= 4; ++a)
        for (int z = -1; z <= 2; ++z) {
            add(Vec3(4000.0, 1000.0 * a, 1000.0 * z));
            add(Vec3(-4000.0, 1000.0 * a, 1000.0 * z));
            add(Vec3(1000.0 * a, 4000.0, 1000.0 * z));
            add(Vec3(1000.0 * a, -4000.0, 1000.0 * z));
        }
    for (int x = -3; x <= 3; ++x)
        for (int y = -3; y <= 3; ++y) add(Vec3(1000.0 * x, 1000.0 * y, 2500.0));
    return out;
}

}  // namespace

SessionConfig default_config()
{
    SessionConfig c;
    c.initial_tracker_pose = look_at(Vec3(-200.0, -2300.0, 600.0), Vec3(-350.0, 0.0, -250.0)) * invert(c.ir_extrinsic);
    c.landmarks = default_landmarks();
    c.keypoints = {{"k1", Vec3(-40.0, -35.0, 10.0)},
                   {"k2", Vec3(35.0, -30.0, 0.0)},
                   {"k3", Vec3(0.0, 25.0, -15.0)},
                   {"k4", Vec3(-20.0, 55.0, 20.0)}};
    return c;
}

void SessionConfig::validate() const
{
    geometry.validate();
    depth_intrinsics.validate();
    tracking_intrinsics.validate();
    icp.validate();
    if (depth_noise_mm < 0.0 || pixel_noise_px < 0.0) throw InvalidArgumentError("noise levels must be non-negative");
    if (max_snapshot_points == 0) throw InvalidArgumentError("max_snapshot_points must be positive");
    if (landmarks.size() < 4) throw InvalidArgumentError("at least four tracking landmarks are required");
    std::set<std::string> ids;
    for (const auto& l : landmarks)
        if (!ids.insert(l.id).second) throw InvalidArgumentError("duplicate landmark id '" + l.id + "'");
}

CArmDofs SessionConfig::preset(const std::string& name) const
{
    if (const auto it = presets.find(name); it != presets.end()) return it->second;
    return preset_dofs(name, geometry);
}

nlohmann::json to_json(const BandingThresholds& b)
{
    return {{"green_mm", b.green_mm}, {"green_deg", b.green_deg}, {"amber_mm", b.amber_mm}, {"amber_deg", b.amber_deg}};
}

BandingThresholds banding_from_json(const nlohmann::json& j)
{
    BandingThresholds b;
    b.green_mm = j.value("green_mm", b.green_mm);
    b.green_deg = j.value("green_deg", b.green_deg);
    b.amber_mm = j.value("amber_mm", b.amber_mm);
    b.amber_deg = j.value("amber_deg", b.amber_deg);
    if (!(b.green_mm <= b.amber_mm && b.green_deg <= b.amber_deg))
        throw InvalidArgumentError("green banding thresholds must not exceed amber ones");
    return b;
}

SessionConfig config_from_json(const nlohmann::json& j)
{
    static const std::set<std::string> known{
        "geometry",   "depth_intrinsics", "tracking_intrinsics", "ir_extrinsic", "initial_tracker_pose",
        "icp",        "banding",          "hints",               "presets",      "landmarks",
        "keypoints",  "depth_noise_mm",   "pixel_noise_px",      "max_snapshot_points", "seed"};
    if (!j.is_object()) throw ParseError("config must be a JSON object");
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) throw ParseError("unknown config key '" + key + "'");

    SessionConfig c = default_config();
    try {
        if (j.contains("geometry")) c.geometry = geometry_from_json(j.at("geometry"));
        if (j.contains("depth_intrinsics")) c.depth_intrinsics = intrinsics_from_json(j.at("depth_intrinsics"));
        if (j.contains("tracking_intrinsics")) c.tracking_intrinsics = intrinsics_from_json(j.at("tracking_intrinsics"));
        if (j.contains("ir_extrinsic")) c.ir_extrinsic = transform_from_json(j.at("ir_extrinsic"));
        if (j.contains("initial_tracker_pose")) c.initial_tracker_pose = transform_from_json(j.at("initial_tracker_pose"));
        if (j.contains("icp")) c.icp = icp_params_from_json(j.at("icp"));
        if (j.contains("banding")) c.banding = banding_from_json(j.at("banding"));
        if (j.contains("hints")) {
            const auto& h = j.at("hints");
            c.hints.max_angle_deg = h.value("max_angle_deg", c.hints.max_angle_deg);
            c.hints.max_distance_mm = h.value("max_distance_mm", c.hints.max_distance_mm);
            c.hints.max_condition_number = h.value("max_condition_number", c.hints.max_condition_number);
        }
        if (j.contains("presets"))
            for (const auto& [name, dofs] : j.at("presets").items())
                c.presets[name] = dofs_from_json(dofs, neutral_dofs(c.geometry));
        if (j.contains("landmarks")) {
            c.landmarks.clear();
            for (const auto& l : j.at("landmarks"))
                c.landmarks.push_back({l.at("id").get<std::string>(), vec3_from_json(l.at("position"))});
        }
        if (j.contains("keypoints")) {
            c.keypoints.clear();
            for (const auto& k : j.at("keypoints"))
                c.keypoints.push_back({k.at("id").get<std::string>(), vec3_from_json(k.at("position"))});
        }
        c.depth_noise_mm = j.value("depth_noise_mm", c.depth_noise_mm);
        c.pixel_noise_px = j.value("pixel_noise_px", c.pixel_noise_px);
        c.max_snapshot_points = j.value("max_snapshot_points", c.max_snapshot_points);
        c.seed = j.value("seed", c.seed);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad config: ") + e.what());
    }
    c.validate();
    return c;
}

nlohmann::json to_json(const SessionConfig& c)
{
    nlohmann::json presets = nlohmann::json::object();
    for (const auto& [name, dofs] : c.presets) presets[name] = to_json(dofs);
    nlohmann::json landmarks = nlohmann::json::array();
    for (const auto& l : c.landmarks) landmarks.push_back({{"id", l.id}, {"position", vec3_to_json(l.position)}});
    nlohmann::json keypoints = nlohmann::json::array();
    for (const auto& k : c.keypoints) keypoints.push_back({{"id", k.id}, {"position", vec3_to_json(k.position)}});
    return {{"geometry", to_json(c.geometry)},
            {"depth_intrinsics", to_json(c.depth_intrinsics)},
            {"tracking_intrinsics", to_json(c.tracking_intrinsics)},
            {"ir_extrinsic", transform_to_json(c.ir_extrinsic)},
            {"initial_tracker_pose", transform_to_json(c.initial_tracker_pose)},
            {"icp", to_json(c.icp)},
            {"banding", to_json(c.banding)},
            {"hints",
             {{"max_angle_deg", c.hints.max_angle_deg},
              {"max_distance_mm", c.hints.max_distance_mm},
              {"max_condition_number", c.hints.max_condition_number}}},
            {"presets", presets},
            {"landmarks", landmarks},
            {"keypoints", keypoints},
            {"depth_noise_mm", c.depth_noise_mm},
            {"pixel_noise_px", c.pixel_noise_px},
            {"max_snapshot_points", c.max_snapshot_points},
            {"seed", c.seed}};
}

SessionConfig load_config(const std::filesystem::path& path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const Error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

SessionConfig resolve_config(const std::optional<std::filesystem::path>& explicit_path)
{
    if (explicit_path) return load_config(*explicit_path);
    if (const char* env = std::getenv(kConfigEnvVar); env && *env) return load_config(env);
    return default_config();
}

}  // namespace carm
