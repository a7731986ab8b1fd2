#pragma once

#include "carm/config.hpp"
#include "carm/evaluation.hpp"

#include <cstdint>

namespace carm {

/// Behaviour of the simulated technician.
struct OperatorModel {
    // Conventional arm: eyeball the pose, shoot, correct, repeat.
    double initial_error_mm = 45.0;      ///< SD of the first attempt, per horizontal axis
    double initial_error_deg = 3.0;      ///< SD of the first attempt, per rotational DOF
    double correction_gain = 0.7;        ///< fraction of the remaining error removed per shot
    double residual_error_mm = 6.0;      ///< SD of fresh error introduced by each correction
    double residual_error_deg = 0.5;
    double accept_px = 80.0;             ///< stop when keypoints sit this close to the reference
    int max_shots = 8;

    // Proposed arm: match the overlay by eye; orientation is judged better than position.
    double overlay_error_mm = 40.0;
    double overlay_error_deg = 1.1;

    double seconds_per_move = 25.0;
    double seconds_per_shot = 8.0;

    void validate() const;
};

nlohmann::json to_json(const OperatorModel& m);
OperatorModel operator_model_from_json(const nlohmann::json& j);

/// Plays every run of the scenario with the simulated technician and returns
/// the event log. The proposed arm drives a SessionEngine (save at the target,
/// reset, realign on the overlay, one verification shot). Deterministic in `seed`.
RunLog simulate_study(const StudyScenario& scenario, const SessionConfig& config, const OperatorModel& model,
                      std::uint64_t seed);

}  // namespace carm
