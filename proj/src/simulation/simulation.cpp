#include "carm/simulation.hpp"

#include "carm/session.hpp"

#include <random>

namespace carm {

namespace {

CArmDofs perturb(const CArmDofs& base, double sd_mm, double sd_deg, std::mt19937_64& rng)
{
    std::normal_distribution<double> n(0.0, 1.0);
    CArmDofs d = base;
    d.base_x += sd_mm * n(rng);
    d.base_y += sd_mm * n(rng);
    d.column_height += sd_mm / 3.0 * n(rng);
    d.wheel_yaw += sd_deg / 2.0 * n(rng);
    d.orbital += sd_deg * n(rng);
    d.angular_tilt += sd_deg * n(rng);
    return clamp_to_limits(d);
}

KeypointSet shoot(const std::vector<Keypoint3D>& keypoints, const CArmDofs& dofs, const CArmGeometry& geom)
{
    KeypointSet out;
    for (const auto& k : keypoints) {
        try {
            const XrayProjection p = xray_project(k, dofs, geom);
            if (p.in_field_of_view) out[k.id] = p.pixel;
        } catch (const BehindSourceError&) {
        }
    }
    return out;
}

Outcome must(SessionEngine& engine, Verb verb, nlohmann::json args)
{
    Command cmd;
    cmd.verb = verb;
    cmd.args = std::move(args);
    Outcome o = engine.handle(cmd);
    if (!o.reply.ok) throw Error("simulated " + std::string(to_string(verb)) + " failed: " + o.reply.error);
    return o;
}

class Simulator {
public:
    Simulator(const StudyScenario& scenario, const SessionConfig& config, const OperatorModel& model, std::uint64_t seed)
        : scenario_(scenario), config_(config), model_(model), rng_(seed)
    {
        if (!scenario_.keypoints.empty()) config_.keypoints = scenario_.keypoints;
    }

    RunLog run()
    {
        for (const auto& run : scenario_.runs)
            for (Arm arm : run.arm_order) {
                std::optional<SessionEngine> engine;
                if (arm == Arm::Proposed) engine.emplace(config_);
                for (const auto& view : run.views) {
                    const CArmDofs target = scenario_.presets.at(view);
                    emit(LogEvent::Kind::Target, run.id, arm, view, target);
                    if (arm == Arm::Conventional)
                        conventional(run.id, view, target);
                    else
                        proposed(*engine, run.id, view, target);
                }
            }
        return std::move(log_);
    }

private:
    void emit(LogEvent::Kind kind, int run, Arm arm, const std::string& view, const CArmDofs& dofs,
              AcquisitionPurpose purpose = AcquisitionPurpose::Repositioning)
    {
        LogEvent e;
        e.kind = kind;
        e.run = run;
        e.arm = arm;
        e.view = view;
        e.t = t_;
        e.dofs = dofs;
        e.purpose = purpose;
        if (kind != LogEvent::Kind::Final) e.keypoints = shoot(config_.keypoints, dofs, config_.geometry);
        log_.events.push_back(std::move(e));
    }

    void conventional(int run, const std::string& view, const CArmDofs& target)
    {
        const KeypointSet reference = shoot(config_.keypoints, target, config_.geometry);
        CArmDofs current = perturb(target, model_.initial_error_mm, model_.initial_error_deg, rng_);
        t_ += model_.seconds_per_move;
        for (int shot = 1;; ++shot) {
            t_ += model_.seconds_per_shot;
            emit(LogEvent::Kind::Acquisition, run, Arm::Conventional, view, current);
            const KeypointSet seen = log_.events.back().keypoints;
            double px = std::numeric_limits<double>::infinity();
            try {
                px = keypoint_displacement(seen, reference);
            } catch (const InvalidArgumentError&) {
                // nothing recognisable in the image: keep correcting
            }
            if (px <= model_.accept_px || shot == model_.max_shots) break;
            CArmDofs next = target;
            for (std::size_t i = 0; i < kDofCount; ++i)
                next[i] = target[i] + (current[i] - target[i]) * (1.0 - model_.correction_gain);
            current = perturb(next, model_.residual_error_mm, model_.residual_error_deg, rng_);
            t_ += model_.seconds_per_move;
        }
        emit(LogEvent::Kind::Final, run, Arm::Conventional, view, current);
    }

    void proposed(SessionEngine& engine, int run, const std::string& view, const CArmDofs& target)
    {
        must(engine, Verb::SetDofs, {{"dofs", to_json(target)}});
        must(engine, Verb::SaveView, {{"name", view}});
        must(engine, Verb::ResetNeutral, nlohmann::json::object());
        must(engine, Verb::ShowView, {{"name", view}});
        const CArmDofs perceived = perturb(target, model_.overlay_error_mm, model_.overlay_error_deg, rng_);
        must(engine, Verb::SetDofs, {{"dofs", to_json(perceived)}});
        t_ += model_.seconds_per_move;
        must(engine, Verb::AcquireXray, {{"view", view}, {"purpose", "verification"}});
        t_ += model_.seconds_per_shot;
        emit(LogEvent::Kind::Acquisition, run, Arm::Proposed, view, engine.state().dofs,
             AcquisitionPurpose::Verification);
        must(engine, Verb::HideView, nlohmann::json::object());
        emit(LogEvent::Kind::Final, run, Arm::Proposed, view, engine.state().dofs);
    }

    const StudyScenario& scenario_;
    SessionConfig config_;
    OperatorModel model_;
    std::mt19937_64 rng_;
    double t_ = 0.0;
    RunLog log_;
};

}  // namespace

void OperatorModel::validate() const
{
    if (initial_error_mm < 0 || initial_error_deg < 0 || residual_error_mm < 0 || residual_error_deg < 0 ||
        overlay_error_mm < 0 || overlay_error_deg < 0)
        throw InvalidArgumentError("operator error levels must be non-negative");
    if (!(correction_gain > 0.0 && correction_gain <= 1.0))
        throw InvalidArgumentError("correction_gain must lie in (0, 1]");
    if (max_shots < 1) throw InvalidArgumentError("max_shots must be at least 1");
    if (accept_px < 0 || seconds_per_move < 0 || seconds_per_shot < 0)
        throw InvalidArgumentError("operator thresholds and durations must be non-negative");
}

nlohmann::json to_json(const OperatorModel& m)
{
    return {{"initial_error_mm", m.initial_error_mm},   {"initial_error_deg", m.initial_error_deg},
            {"correction_gain", m.correction_gain},     {"residual_error_mm", m.residual_error_mm},
            {"residual_error_deg", m.residual_error_deg}, {"accept_px", m.accept_px},
            {"max_shots", m.max_shots},                 {"overlay_error_mm", m.overlay_error_mm},
            {"overlay_error_deg", m.overlay_error_deg}, {"seconds_per_move", m.seconds_per_move},
            {"seconds_per_shot", m.seconds_per_shot}};
}

OperatorModel operator_model_from_json(const nlohmann::json& j)
{
    OperatorModel m;
    const nlohmann::json defaults = to_json(m);
    for (const auto& [key, _] : j.items())
        if (!defaults.contains(key)) throw InvalidArgumentError("unknown operator model key '" + key + "'");
    m.initial_error_mm = j.value("initial_error_mm", m.initial_error_mm);
    m.initial_error_deg = j.value("initial_error_deg", m.initial_error_deg);
    m.correction_gain = j.value("correction_gain", m.correction_gain);
    m.residual_error_mm = j.value("residual_error_mm", m.residual_error_mm);
    m.residual_error_deg = j.value("residual_error_deg", m.residual_error_deg);
    m.accept_px = j.value("accept_px", m.accept_px);
    m.max_shots = j.value("max_shots", m.max_shots);
    m.overlay_error_mm = j.value("overlay_error_mm", m.overlay_error_mm);
    m.overlay_error_deg = j.value("overlay_error_deg", m.overlay_error_deg);
    m.seconds_per_move = j.value("seconds_per_move", m.seconds_per_move);
    m.seconds_per_shot = j.value("seconds_per_shot", m.seconds_per_shot);
    m.validate();
    return m;
}

RunLog simulate_study(const StudyScenario& scenario, const SessionConfig& config, const OperatorModel& model,
                      std::uint64_t seed)
{
    scenario.validate();
    model.validate();
    return Simulator(scenario, config, model, seed).run();
}

}  // namespace carm
