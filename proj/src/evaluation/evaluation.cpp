#include "carm/evaluation.hpp"

#include "carm/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <tuple>

namespace carm {

namespace {

// Welford running moments: identical inputs give an exact mean and zero spread.
struct Moments {
    std::size_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void add(double x)
    {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }
    double sample_sd() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

std::string_view kind_name(LogEvent::Kind k)
{
    switch (k) {
    case LogEvent::Kind::Target: return "target";
    case LogEvent::Kind::Acquisition: return "acquisition";
    case LogEvent::Kind::Final: return "final";
    }
    return "acquisition";
}

std::string fixed(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string optional_fixed(const std::optional<double>& v) { return v ? fixed(*v) : std::string(); }

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

std::string_view to_string(Arm arm) { return arm == Arm::Conventional ? "conventional" : "proposed"; }

Arm arm_from_string(std::string_view s)
{
    if (s == "conventional") return Arm::Conventional;
    if (s == "proposed") return Arm::Proposed;
    throw InvalidArgumentError("unknown study arm '" + std::string(s) + "'");
}

const StudyRun& StudyScenario::run(int id) const
{
    for (const auto& r : runs)
        if (r.id == id) return r;
    throw ScenarioMismatchError("run " + std::to_string(id) + " is not part of the scenario");
}

void StudyScenario::validate() const
{
    if (runs.empty()) throw InvalidArgumentError("scenario has no runs");
    std::set<int> ids;
    for (const auto& r : runs) {
        if (!ids.insert(r.id).second) throw InvalidArgumentError("duplicate run id " + std::to_string(r.id));
        if (r.views.empty()) throw InvalidArgumentError("run " + std::to_string(r.id) + " has no target views");
        if (r.arm_order.empty()) throw InvalidArgumentError("run " + std::to_string(r.id) + " has no arms");
        for (const auto& v : r.views)
            if (!presets.count(v))
                throw ScenarioMismatchError("run " + std::to_string(r.id) + ": view '" + v + "' has no preset");
    }
}

StudyScenario scenario_from_json(const nlohmann::json& j, const CArmGeometry& geom)
{
    StudyScenario s;
    try {
        for (const auto& r : j.at("runs")) {
            StudyRun run;
            run.id = r.at("id").get<int>();
            run.views = r.at("views").get<std::vector<std::string>>();
            if (r.contains("arms")) {
                run.arm_order.clear();
                for (const auto& a : r.at("arms")) run.arm_order.push_back(arm_from_string(a.get<std::string>()));
            }
            s.runs.push_back(std::move(run));
        }
        const CArmDofs neutral = neutral_dofs(geom);
        if (j.contains("presets"))
            for (const auto& [label, dofs] : j.at("presets").items()) s.presets[label] = dofs_from_json(dofs, neutral);
        for (const auto& r : s.runs)
            for (const auto& v : r.views)
                if (!s.presets.count(v)) s.presets[v] = preset_dofs(v, geom);
        if (j.contains("excluded_runs")) s.excluded_runs = j.at("excluded_runs").get<std::set<int>>();
        if (j.contains("reference_per_view_mean"))
            s.reference_per_view_mean = j.at("reference_per_view_mean").get<double>();
        if (j.contains("keypoints"))
            for (const auto& k : j.at("keypoints"))
                s.keypoints.push_back({k.at("id").get<std::string>(), vec3_from_json(k.at("position"))});
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad scenario: ") + e.what());
    }
    for (int id : s.excluded_runs) s.run(id);
    s.validate();
    return s;
}

StudyScenario load_scenario(const std::filesystem::path& path, const CArmGeometry& geom)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    try {
        return scenario_from_json(j, geom);
    } catch (const Error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

nlohmann::json to_json(const StudyScenario& s)
{
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : s.runs) {
        nlohmann::json arms = nlohmann::json::array();
        for (Arm a : r.arm_order) arms.push_back(std::string(to_string(a)));
        runs.push_back({{"id", r.id}, {"views", r.views}, {"arms", arms}});
    }
    nlohmann::json presets = nlohmann::json::object();
    for (const auto& [label, dofs] : s.presets) presets[label] = to_json(dofs);
    nlohmann::json j{{"runs", runs}, {"presets", presets}, {"excluded_runs", s.excluded_runs}};
    if (s.reference_per_view_mean) j["reference_per_view_mean"] = *s.reference_per_view_mean;
    nlohmann::json kps = nlohmann::json::array();
    for (const auto& k : s.keypoints) kps.push_back({{"id", k.id}, {"position", vec3_to_json(k.position)}});
    j["keypoints"] = kps;
    return j;
}

nlohmann::json to_json(const LogEvent& e)
{
    nlohmann::json j{{"event", std::string(kind_name(e.kind))},
                     {"run", e.run},
                     {"arm", std::string(to_string(e.arm))},
                     {"view", e.view},
                     {"t", e.t},
                     {"dofs", to_json(e.dofs)}};
    if (e.kind == LogEvent::Kind::Acquisition)
        j["purpose"] = e.purpose == AcquisitionPurpose::Repositioning ? "repositioning" : "verification";
    if (!e.keypoints.empty()) {
        nlohmann::json kp = nlohmann::json::object();
        for (const auto& [id, px] : e.keypoints) kp[id] = {px.x(), px.y()};
        j["keypoints"] = kp;
    }
    return j;
}

LogEvent log_event_from_json(const nlohmann::json& j)
{
    LogEvent e;
    try {
        const std::string kind = j.at("event").get<std::string>();
        if (kind == "target")
            e.kind = LogEvent::Kind::Target;
        else if (kind == "acquisition")
            e.kind = LogEvent::Kind::Acquisition;
        else if (kind == "final")
            e.kind = LogEvent::Kind::Final;
        else
            throw InvalidArgumentError("unknown event type '" + kind + "'");
        e.run = j.at("run").get<int>();
        e.arm = arm_from_string(j.at("arm").get<std::string>());
        e.view = j.at("view").get<std::string>();
        e.t = j.at("t").get<double>();
        e.dofs = dofs_from_json(j.at("dofs"));
        if (e.kind == LogEvent::Kind::Acquisition) {
            const std::string purpose = j.value("purpose", std::string("repositioning"));
            if (purpose == "repositioning")
                e.purpose = AcquisitionPurpose::Repositioning;
            else if (purpose == "verification")
                e.purpose = AcquisitionPurpose::Verification;
            else
                throw InvalidArgumentError("unknown acquisition purpose '" + purpose + "'");
        }
        if (j.contains("keypoints"))
            for (const auto& [id, px] : j.at("keypoints").items()) {
                if (!px.is_array() || px.size() != 2) throw InvalidArgumentError("keypoint '" + id + "' needs [u, v]");
                e.keypoints[id] = Eigen::Vector2d(px[0].get<double>(), px[1].get<double>());
            }
    } catch (const nlohmann::json::exception& ex) {
        throw InvalidArgumentError(ex.what());
    }
    return e;
}

RunLog load_run_log(const std::filesystem::path& path)
{
    std::istringstream in(read_text_file(path));
    RunLog log;
    std::string line;
    for (std::size_t n = 1; std::getline(in, line); ++n) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            LogEvent e = log_event_from_json(nlohmann::json::parse(line));
            if (!log.events.empty() && e.t < log.events.back().t)
                throw InvalidArgumentError("event time " + std::to_string(e.t) + " is earlier than the previous event");
            log.events.push_back(std::move(e));
        } catch (const std::exception& e) {
            throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return log;
}

std::string to_json_lines(const RunLog& log)
{
    std::string out;
    for (const auto& e : log.events) out += to_json(e).dump() + "\n";
    return out;
}

PoseErrorStats pose_error_stats(const std::vector<std::pair<RigidTransform, RigidTransform>>& pairs)
{
    if (pairs.empty()) throw InvalidArgumentError("pose_error_stats needs at least one pair");
    Moments dist, angle;
    for (const auto& [final_pose, target] : pairs) {
        const PoseDelta d = pose_delta(final_pose, target);
        dist.add(d.distance_mm);
        angle.add(d.angle_deg);
    }
    return {pairs.size(), dist.mean, dist.sample_sd(), angle.mean, angle.sample_sd()};
}

double keypoint_displacement(const KeypointSet& a, const KeypointSet& b)
{
    Moments m;
    for (const auto& [id, pa] : a)
        if (const auto it = b.find(id); it != b.end()) m.add(std::hypot(pa.x() - it->second.x(), pa.y() - it->second.y()));
    if (m.n == 0) throw InvalidArgumentError("keypoint sets share no ids");
    return m.mean;
}

StudyReport run_study(const StudyScenario& scenario, const RunLog& log, const CArmGeometry& geom)
{
    scenario.validate();

    struct Track {
        std::optional<LogEvent> target;
        std::vector<const LogEvent*> acquisitions;
        std::optional<LogEvent> final_event;
    };
    using Key = std::tuple<int, Arm, std::string>;
    std::map<Key, Track> tracks;

    double last_t = -std::numeric_limits<double>::infinity();
    for (const auto& e : log.events) {
        const StudyRun& run = [&]() -> const StudyRun& {
            try {
                return scenario.run(e.run);
            } catch (const ScenarioMismatchError&) {
                throw ScenarioMismatchError("view '" + e.view + "': run " + std::to_string(e.run) +
                                            " is not part of the scenario");
            }
        }();
        if (std::find(run.views.begin(), run.views.end(), e.view) == run.views.end())
            throw ScenarioMismatchError("view '" + e.view + "' is not defined for run " + std::to_string(e.run));
        if (std::find(run.arm_order.begin(), run.arm_order.end(), e.arm) == run.arm_order.end())
            throw ScenarioMismatchError("view '" + e.view + "': run " + std::to_string(e.run) + " has no " +
                                        std::string(to_string(e.arm)) + " arm");
        if (e.t < last_t) throw ScenarioMismatchError("view '" + e.view + "': events are not chronological");
        last_t = e.t;

        Track& track = tracks[{e.run, e.arm, e.view}];
        switch (e.kind) {
        case LogEvent::Kind::Target: track.target = e; break;
        case LogEvent::Kind::Acquisition: track.acquisitions.push_back(&e); break;
        case LogEvent::Kind::Final: track.final_event = e; break;
        }
    }

    StudyReport report;
    report.excluded_runs = scenario.excluded_runs;
    report.reference_per_view_mean = scenario.reference_per_view_mean;

    std::map<Arm, std::vector<std::pair<RigidTransform, RigidTransform>>> pose_pairs;
    std::map<Arm, Moments> first_px, final_px;
    for (const auto& run : scenario.runs) {
        if (scenario.excluded_runs.count(run.id)) continue;
        for (Arm arm : run.arm_order)
            for (const auto& view : run.views) {
                const auto it = tracks.find({run.id, arm, view});
                const std::string where = "view '" + view + "' (run " + std::to_string(run.id) + ", " +
                                          std::string(to_string(arm)) + ")";
                if (it == tracks.end() || !it->second.final_event)
                    throw ScenarioMismatchError(where + " has no final pose in the log");
                const Track& track = it->second;

                const CArmDofs target_dofs = track.target ? track.target->dofs : scenario.presets.at(view);
                const RigidTransform target = forward_kinematics(target_dofs, geom).gantry;
                const RigidTransform reached = forward_kinematics(track.final_event->dofs, geom).gantry;

                ViewResult res;
                res.run = run.id;
                res.view = view;
                res.arm = arm;
                res.error = pose_delta(reached, target);
                pose_pairs[arm].emplace_back(reached, target);

                std::vector<const LogEvent*> repositioning, verification;
                for (const LogEvent* a : track.acquisitions)
                    (a->purpose == AcquisitionPurpose::Repositioning ? repositioning : verification).push_back(a);
                res.xray_count = static_cast<int>(repositioning.size());

                const KeypointSet* reference = track.target && !track.target->keypoints.empty()
                                                   ? &track.target->keypoints
                                                   : nullptr;
                const auto displacement = [&](const LogEvent* a) -> std::optional<double> {
                    if (!reference || a->keypoints.empty()) return std::nullopt;
                    try {
                        return keypoint_displacement(a->keypoints, *reference);
                    } catch (const InvalidArgumentError& ex) {
                        throw ScenarioMismatchError(where + ": " + ex.what());
                    }
                };
                if (arm == Arm::Conventional) {
                    if (!repositioning.empty()) {
                        res.first_try_px = displacement(repositioning.front());
                        res.final_px = displacement(repositioning.back());
                    }
                } else if (!verification.empty()) {
                    res.final_px = displacement(verification.back());
                }
                if (res.first_try_px) first_px[arm].add(*res.first_try_px);
                if (res.final_px) final_px[arm].add(*res.final_px);

                ArmSummary& summary = report.arms[arm];
                ++summary.views;
                summary.total_xrays += res.xray_count;
                report.views.push_back(std::move(res));
            }
    }

    for (auto& [arm, summary] : report.arms) {
        summary.pose = pose_error_stats(pose_pairs[arm]);
        if (first_px[arm].n) summary.mean_first_try_px = first_px[arm].mean;
        if (final_px[arm].n) summary.mean_final_px = final_px[arm].mean;
        summary.xrays_per_view = static_cast<double>(summary.total_xrays) / static_cast<double>(summary.views);
    }
    if (report.reference_per_view_mean && report.arms.count(Arm::Conventional)) {
        // Compared at the two decimals such figures are usually quoted with.
        const double exact = report.arms.at(Arm::Conventional).xrays_per_view;
        report.reference_mismatch = std::abs(std::round(exact * 100.0) - std::round(*report.reference_per_view_mean * 100.0)) > 0.0;
    }
    return report;
}

std::string to_csv(const StudyReport& report)
{
    std::string out = "run,view,arm,dist_mm,angle_deg,first_try_px,final_px,xray_count\n";
    for (const auto& v : report.views) {
        out += std::to_string(v.run) + "," + v.view + "," + std::string(to_string(v.arm)) + "," +
               fixed(v.error.distance_mm) + "," + fixed(v.error.angle_deg) + "," + optional_fixed(v.first_try_px) + "," +
               optional_fixed(v.final_px) + "," + std::to_string(v.xray_count) + "\n";
    }
    return out;
}

nlohmann::json summary_json(const StudyReport& report)
{
    nlohmann::json arms = nlohmann::json::object();
    for (const auto& [arm, s] : report.arms) {
        nlohmann::json a{{"views", s.views},
                         {"total_xrays", s.total_xrays},
                         {"xrays_per_view", s.xrays_per_view},
                         {"mean_first_try_px", optional_json(s.mean_first_try_px)},
                         {"mean_final_px", optional_json(s.mean_final_px)}};
        if (s.pose)
            a["pose_error"] = {{"n", s.pose->n},
                               {"mean_distance_mm", s.pose->mean_distance_mm},
                               {"sd_distance_mm", s.pose->sd_distance_mm},
                               {"mean_angle_deg", s.pose->mean_angle_deg},
                               {"sd_angle_deg", s.pose->sd_angle_deg},
                               {"sd_convention", "sample (n-1)"}};
        arms[std::string(to_string(arm))] = a;
    }
    nlohmann::json j{{"arms", arms},
                     {"excluded_runs", report.excluded_runs},
                     {"ground_truth_source", report.ground_truth_source}};
    if (report.reference_per_view_mean) {
        j["reference_per_view_mean"] = *report.reference_per_view_mean;
        j["reference_mismatch"] = report.reference_mismatch;
        if (report.reference_mismatch && report.arms.count(Arm::Conventional)) {
            const auto& c = report.arms.at(Arm::Conventional);
            j["reference_note"] = std::to_string(c.total_xrays) + " X-rays over " + std::to_string(c.views) +
                                  " views is " + fixed(c.xrays_per_view) + " per view, not " +
                                  fixed(*report.reference_per_view_mean);
        }
    }
    return j;
}

}  // namespace carm
