#include "carm/session.hpp"

#include "carm/evaluation.hpp"
#include "carm/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

namespace carm {

namespace {

constexpr std::array<std::string_view, 10> kVerbNames{
    "save_view",         "show_view",     "hide_view", "toggle_live", "set_dofs", "adjust_dof", "acquire_xray",
    "request_alignment", "reset_neutral", "set_tracker_pose"};

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t base, std::uint64_t sequence, std::uint64_t stream)
{
    return splitmix64(splitmix64(base ^ splitmix64(sequence)) + stream);
}

struct ArgSpec {
    std::string_view name;
    nlohmann::json::value_t type;
    bool required;
};

const std::vector<ArgSpec>& arg_specs(Verb verb)
{
    using T = nlohmann::json::value_t;
    static const std::map<Verb, std::vector<ArgSpec>> specs{
        {Verb::SaveView, {{"name", T::string, true}}},
        {Verb::ShowView, {{"name", T::string, true}}},
        {Verb::HideView, {}},
        {Verb::ToggleLive, {{"visible", T::boolean, false}}},
        {Verb::SetDofs, {{"dofs", T::object, false}, {"preset", T::string, false}}},
        {Verb::AdjustDof, {{"dof", T::string, true}, {"delta", T::number_float, true}}},
        {Verb::AcquireXray, {{"view", T::string, false}, {"purpose", T::string, false}}},
        {Verb::RequestAlignment, {{"name", T::string, false}}},
        {Verb::ResetNeutral, {}},
        {Verb::SetTrackerPose, {{"pose", T::object, false}, {"matrix", T::array, false}}},
    };
    return specs.at(verb);
}

bool type_matches(const nlohmann::json& v, nlohmann::json::value_t t)
{
    if (t == nlohmann::json::value_t::number_float) return v.is_number();
    return v.type() == t;
}

nlohmann::json cloud_json(const TaggedPointCloud& cloud, std::size_t max_points)
{
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : decimate(cloud.points, max_points)) pts.push_back({p.x(), p.y(), p.z()});
    return {{"frame", std::string(to_string(cloud.frame))}, {"total", cloud.size()}, {"points", pts}};
}

std::string fixed(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

std::string_view to_string(Verb verb) { return kVerbNames[static_cast<std::size_t>(verb)]; }

std::optional<Verb> verb_from_string(std::string_view s)
{
    for (std::size_t i = 0; i < kVerbNames.size(); ++i)
        if (kVerbNames[i] == s) return static_cast<Verb>(i);
    return std::nullopt;
}

nlohmann::json to_json(const Command& cmd)
{
    nlohmann::json j{{"type", "cmd"}, {"verb", std::string(to_string(cmd.verb))}, {"args", cmd.args.is_null() ? nlohmann::json::object() : cmd.args},
                     {"request_id", cmd.request_id}};
    if (!cmd.client_id.empty()) j["client"] = cmd.client_id;
    return j;
}

Command command_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw CommandError("command must be a JSON object");
    if (j.contains("type") && j.at("type") != "cmd") throw CommandError("message type must be \"cmd\"");
    if (!j.contains("verb") || !j.at("verb").is_string()) throw CommandError("command has no verb");
    Command cmd;
    const auto verb = verb_from_string(j.at("verb").get<std::string>());
    if (!verb) throw CommandError("unknown verb '" + j.at("verb").get<std::string>() + "'");
    cmd.verb = *verb;
    if (j.contains("request_id")) {
        const auto& id = j.at("request_id");
        cmd.request_id = id.is_string() ? id.get<std::string>() : id.dump();
    }
    if (j.contains("client") && j.at("client").is_string()) cmd.client_id = j.at("client").get<std::string>();
    if (j.contains("args") && !j.at("args").is_null()) {
        if (!j.at("args").is_object()) throw CommandError("args must be an object");
        cmd.args = j.at("args");
    }

    const auto& specs = arg_specs(cmd.verb);
    for (const auto& [key, value] : cmd.args.items()) {
        const auto it = std::find_if(specs.begin(), specs.end(), [&](const ArgSpec& s) { return s.name == key; });
        if (it == specs.end())
            throw CommandError(std::string(to_string(cmd.verb)) + ": unexpected argument '" + key + "'");
        if (!type_matches(value, it->type))
            throw CommandError(std::string(to_string(cmd.verb)) + ": argument '" + key + "' has the wrong type");
    }
    for (const auto& s : specs)
        if (s.required && !cmd.args.contains(std::string(s.name)))
            throw CommandError(std::string(to_string(cmd.verb)) + ": missing argument '" + std::string(s.name) + "'");
    if (cmd.verb == Verb::SetDofs && cmd.args.contains("dofs") == cmd.args.contains("preset"))
        throw CommandError("set_dofs: give exactly one of 'dofs' or 'preset'");
    if (cmd.verb == Verb::SetTrackerPose && cmd.args.contains("pose") == cmd.args.contains("matrix"))
        throw CommandError("set_tracker_pose: give exactly one of 'pose' or 'matrix'");
    if ((cmd.verb == Verb::SaveView || cmd.verb == Verb::ShowView) && cmd.args.at("name").get<std::string>().empty())
        throw CommandError(std::string(to_string(cmd.verb)) + ": name must not be empty");
    return cmd;
}

nlohmann::json to_json(const Reply& r)
{
    nlohmann::json j{{"type", "reply"}, {"request_id", r.request_id}, {"ok", r.ok}};
    if (r.ok)
        j["data"] = r.data;
    else
        j["error"] = r.error;
    return j;
}

std::vector<Vec3> decimate(const std::vector<Vec3>& points, std::size_t max_points)
{
    if (points.size() <= max_points) return points;
    std::vector<Vec3> out;
    out.reserve(max_points);
    for (std::size_t i = 0; i < max_points; ++i) out.push_back(points[i * points.size() / max_points]);
    return out;
}

SessionEngine::SessionEngine(SessionConfig config) : config_(std::move(config))
{
    config_.validate();
    state_.dofs = neutral_dofs(config_.geometry);
    state_.tracker_pose = config_.initial_tracker_pose;
    state_.tracker_truth = config_.initial_tracker_pose;
    update_tracker(config_.initial_tracker_pose);
}

void SessionEngine::update_tracker(const RigidTransform& truth)
{
    // Dead-reckoned guess: the previous estimate moved by the commanded motion.
    const RigidTransform guess = truth * invert(state_.tracker_truth) * state_.tracker_pose;
    auto obs = observe_landmarks(config_.landmarks, truth, config_.tracking_intrinsics,
                                 static_cast<double>(state_.sequence));
    if (config_.pixel_noise_px > 0.0) {
        std::mt19937_64 rng(stream_seed(config_.seed, state_.sequence, 2));
        std::normal_distribution<double> noise(0.0, config_.pixel_noise_px);
        for (auto& o : obs) {
            const double du = noise(rng);
            const double dv = noise(rng);
            o.pixel += Eigen::Vector2d(du, dv);
        }
    }
    const TrackerEstimate est = solve_pose(config_.landmarks, obs, config_.tracking_intrinsics, guess);
    if (!est.converged)
        throw InvalidArgumentError("HMD tracking lost: solver stopped with status " + std::string(to_string(est.status)));
    state_.tracker_truth = truth;
    state_.tracker_pose = est.pose;
    state_.tracker_rms_px = est.rms_px;
}

KeypointSet SessionEngine::project_keypoints(const CArmDofs& dofs) const
{
    KeypointSet out;
    for (const auto& k : config_.keypoints) {
        try {
            const XrayProjection p = xray_project(k, dofs, config_.geometry);
            if (p.in_field_of_view) out[k.id] = p.pixel;
        } catch (const BehindSourceError&) {
        }
    }
    return out;
}

const TaggedPointCloud& SessionEngine::live_cloud_sensor() const
{
    if (!live_cache_ || live_cache_->first != state_.sequence) {
        const SurfaceModel scene = surface_model(state_.dofs, config_.geometry);
        RenderOptions opts;
        opts.noise_sigma_mm = config_.depth_noise_mm;
        opts.seed = stream_seed(config_.seed, state_.sequence, 1);
        opts.timestamp = static_cast<double>(state_.sequence);
        const DepthImage img =
            render_depth(scene, state_.tracker_truth * config_.ir_extrinsic, config_.depth_intrinsics, opts);
        live_cache_.emplace(state_.sequence, unproject_depth(img));
    }
    return live_cache_->second;
}

TaggedPointCloud SessionEngine::live_cloud_technician() const
{
    const TaggedPointCloud& sensor = live_cloud_sensor();
    TaggedPointCloud out{Frame::Technician, {}, sensor.timestamp};
    out.points.reserve(sensor.size());
    for (const auto& p : sensor.points) out.points.push_back(config_.ir_extrinsic.apply(p));
    return out;
}

std::optional<TaggedPointCloud> SessionEngine::shown_cloud_technician() const
{
    if (!state_.shown_view) return std::nullopt;
    return state_.registry.show_view(*state_.shown_view, state_.tracker_pose);
}

Outcome SessionEngine::handle(const Command& cmd)
{
    Outcome out;
    out.reply.request_id = cmd.request_id;
    try {
        nlohmann::json events = nlohmann::json::array();
        out.reply.data = apply(cmd, events);
        out.reply.ok = true;
        out.mutated = true;
        ++state_.sequence;
        for (auto& e : events) e["sequence"] = state_.sequence;
        out.events = std::move(events);
    } catch (const Error& e) {
        out.reply.ok = false;
        out.reply.data = nullptr;
        out.reply.error = e.what();
    }
    return out;
}

nlohmann::json SessionEngine::apply(const Command& cmd, nlohmann::json& events)
{
    const nlohmann::json& args = cmd.args;
    const auto view_arg = [&](const char* key) -> std::string {
        if (args.contains(key)) return args.at(key).get<std::string>();
        if (!state_.shown_view) throw InvalidArgumentError(std::string(to_string(cmd.verb)) + ": no view given and none shown");
        return *state_.shown_view;
    };

    switch (cmd.verb) {
    case Verb::SaveView: {
        const std::string name = args.at("name").get<std::string>();
        const TaggedPointCloud& sensor = live_cloud_sensor();
        if (sensor.empty()) throw InvalidArgumentError("save_view: the depth sensor does not see the C-arm");
        const KeypointSet reference = project_keypoints(state_.dofs);
        const SaveResult res = state_.registry.save_view(name, sensor, state_.tracker_pose, config_.ir_extrinsic,
                                                         static_cast<double>(state_.sequence), reference);
        state_.saved_dofs[name] = state_.dofs;
        if (state_.alignment_view == name) {
            state_.alignment.reset();
            state_.alignment_view.reset();
        }
        events.push_back({{"event", "view_saved"}, {"name", name}, {"replaced", res.replaced}});
        return {{"name", name}, {"replaced", res.replaced}, {"point_count", res.view->world_cloud.size()}};
    }
    case Verb::ShowView: {
        const std::string name = args.at("name").get<std::string>();
        if (!state_.registry.contains(name)) throw UnknownViewError("unknown view '" + name + "'");
        state_.shown_view = name;
        events.push_back({{"event", "view_shown"}, {"name", name}});
        return {{"name", name}, {"point_count", state_.registry.get(name).world_cloud.size()}};
    }
    case Verb::HideView: {
        const nlohmann::json hidden = state_.shown_view ? nlohmann::json(*state_.shown_view) : nlohmann::json();
        state_.shown_view.reset();
        events.push_back({{"event", "view_hidden"}, {"name", hidden}});
        return {{"hidden", hidden}};
    }
    case Verb::ToggleLive: {
        state_.live_visible = args.contains("visible") ? args.at("visible").get<bool>() : !state_.live_visible;
        events.push_back({{"event", "live_toggled"}, {"visible", state_.live_visible}});
        return {{"visible", state_.live_visible}};
    }
    case Verb::SetDofs: {
        CArmDofs next = args.contains("preset") ? config_.preset(args.at("preset").get<std::string>())
                                                : dofs_from_json(args.at("dofs"), state_.dofs);
        validate(next);
        state_.dofs = next;
        events.push_back({{"event", "dofs_changed"}});
        return {{"dofs", to_json(state_.dofs)}};
    }
    case Verb::AdjustDof: {
        const std::string name = args.at("dof").get<std::string>();
        const auto index = dof_index(name);
        if (!index) throw InvalidArgumentError("adjust_dof: unknown DOF '" + name + "'");
        CArmDofs next = state_.dofs;
        next[*index] += args.at("delta").get<double>();
        validate(next);
        state_.dofs = next;
        events.push_back({{"event", "dofs_changed"}});
        return {{"dofs", to_json(state_.dofs)}};
    }
    case Verb::AcquireXray: {
        const std::string view = view_arg("view");
        const std::string purpose = args.value("purpose", std::string("repositioning"));
        if (purpose != "repositioning" && purpose != "verification")
            throw InvalidArgumentError("acquire_xray: purpose must be 'repositioning' or 'verification'");
        AcquisitionRecord rec{state_.sequence + 1, view, purpose, state_.dofs, project_keypoints(state_.dofs)};
        nlohmann::json kp = nlohmann::json::object();
        for (const auto& [id, px] : rec.keypoints) kp[id] = {px.x(), px.y()};
        const int count = ++state_.xray_counts[view];
        state_.acquisitions.push_back(std::move(rec));
        events.push_back({{"event", "xray_acquired"}, {"view", view}, {"purpose", purpose}, {"count", count}});
        return {{"view", view}, {"purpose", purpose}, {"count", count}, {"keypoints", kp}};
    }
    case Verb::RequestAlignment: {
        const std::string name = view_arg("name");
        const SavedView& saved = state_.registry.get(name);
        const TaggedPointCloud& sensor = live_cloud_sensor();
        const TaggedPointCloud live_world = transform_cloud(
            FrameTransform{state_.tracker_pose * config_.ir_extrinsic, Frame::World, Frame::IRSensor}, sensor);
        AlignmentReport report = icp_align(live_world, saved.world_cloud, config_.icp);
        try {
            report.dof_hints = dof_adjustment_from_delta(report.delta, state_.dofs, config_.geometry, config_.hints);
        } catch (const DofRangeError& e) {
            DofHint none;
            none.reason = e.what();
            report.dof_hints = none;
        }
        const nlohmann::json j = to_json(report, config_.banding);
        state_.alignment = std::move(report);
        state_.alignment_view = name;
        events.push_back({{"event", "alignment_ready"}, {"name", name}, {"band", j.at("band")}});
        return j;
    }
    case Verb::ResetNeutral: {
        state_.dofs = neutral_dofs(config_.geometry);
        events.push_back({{"event", "dofs_changed"}});
        return {{"dofs", to_json(state_.dofs)}};
    }
    case Verb::SetTrackerPose: {
        const RigidTransform truth = args.contains("pose") ? transform_from_json(args.at("pose"))
                                                           : transform_from_matrix_json(args.at("matrix"));
        update_tracker(truth);
        events.push_back({{"event", "tracker_moved"}});
        return {{"tracker_pose", transform_to_json(state_.tracker_pose)}, {"rms_px", state_.tracker_rms_px}};
    }
    }
    throw CommandError("unhandled verb");
}

nlohmann::json SessionEngine::snapshot(const nlohmann::json& events) const
{
    const CArmPoses poses = forward_kinematics(state_.dofs, config_.geometry);
    nlohmann::json ranges = nlohmann::json::object();
    for (std::size_t i = 0; i < kDofCount; ++i) {
        const DofLimits lim = dof_limits(i);
        ranges[std::string(kDofNames[i])] = {std::isfinite(lim.lower) ? nlohmann::json(lim.lower) : nlohmann::json(),
                                             std::isfinite(lim.upper) ? nlohmann::json(lim.upper) : nlohmann::json()};
    }
    nlohmann::json views = nlohmann::json::array();
    for (const auto& n : state_.registry.names()) views.push_back(n);

    nlohmann::json j{
        {"type", "snapshot"},
        {"sequence", state_.sequence},
        {"dofs", to_json(state_.dofs)},
        {"dof_ranges", ranges},
        {"poses",
         {{"gantry", transform_to_matrix_json(poses.gantry)},
          {"source", transform_to_matrix_json(poses.source)},
          {"detector", transform_to_matrix_json(poses.detector)},
          {"tracker", transform_to_matrix_json(state_.tracker_pose)},
          {"tracker_truth", transform_to_matrix_json(state_.tracker_truth)}}},
        {"tracker_rms_px", state_.tracker_rms_px},
        {"live_visible", state_.live_visible},
        {"shown_view", state_.shown_view ? nlohmann::json(*state_.shown_view) : nlohmann::json()},
        {"views", views},
        {"xray_counts", state_.xray_counts},
        {"events", events},
    };
    j["live_cloud"] = state_.live_visible ? cloud_json(live_cloud_technician(), config_.max_snapshot_points)
                                          : nlohmann::json();
    const auto shown = shown_cloud_technician();
    j["shown_cloud"] = shown ? cloud_json(*shown, config_.max_snapshot_points) : nlohmann::json();
    j["alignment"] = state_.alignment ? to_json(*state_.alignment, config_.banding) : nlohmann::json();
    j["alignment_view"] = state_.alignment_view ? nlohmann::json(*state_.alignment_view) : nlohmann::json();
    return j;
}

CommandRecorder::CommandRecorder(const std::filesystem::path& path) : out_(path, std::ios::trunc), path_(path)
{
    if (!out_) throw IoError("cannot open command log '" + path.string() + "'");
}

void CommandRecorder::record(const Command& cmd)
{
    out_ << to_json(cmd).dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("failed writing command log '" + path_.string() + "'");
}

void replay_commands(SessionEngine& engine, std::istream& in, const std::string& source_name)
{
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Command cmd;
        try {
            cmd = command_from_json(nlohmann::json::parse(line));
        } catch (const std::exception& e) {
            throw ParseError(source_name + ":" + std::to_string(n) + ": " + e.what());
        }
        engine.handle(cmd);
    }
}

void replay_log(SessionEngine& engine, const std::filesystem::path& path)
{
    std::istringstream in(read_text_file(path));
    replay_commands(engine, in, path.string());
}

std::string view_report_csv(const SessionEngine& engine)
{
    const SessionState& s = engine.state();
    std::set<std::string> views;
    for (const auto& n : s.registry.names()) views.insert(n);
    for (const auto& [v, _] : s.xray_counts) views.insert(v);

    std::string out = "view,xray_count,dist_mm,angle_deg,final_px\n";
    for (const auto& v : views) {
        const auto count_it = s.xray_counts.find(v);
        const int count = count_it == s.xray_counts.end() ? 0 : count_it->second;
        std::string dist, angle, px;
        const AcquisitionRecord* last = nullptr;
        for (const auto& a : s.acquisitions)
            if (a.view == v) last = &a;
        const auto saved = s.saved_dofs.find(v);
        if (last && saved != s.saved_dofs.end()) {
            const auto& geom = engine.config().geometry;
            const PoseDelta d = pose_delta(forward_kinematics(last->dofs, geom).gantry,
                                           forward_kinematics(saved->second, geom).gantry);
            dist = fixed(d.distance_mm);
            angle = fixed(d.angle_deg);
            const auto& ref = s.registry.get(v).reference_keypoints;
            if (ref && !ref->empty() && !last->keypoints.empty()) {
                try {
                    px = fixed(keypoint_displacement(last->keypoints, *ref));
                } catch (const InvalidArgumentError&) {
                }
            }
        }
        out += v + "," + std::to_string(count) + "," + dist + "," + angle + "," + px + "\n";
    }
    return out;
}

}  // namespace carm
