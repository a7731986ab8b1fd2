#include "carm/config.hpp"
#include "carm/io.hpp"
#include "carm/session.hpp"
#include "session_support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace carm {
namespace {

using testing::max_abs_diff;

Command make(Verb verb, nlohmann::json args = nlohmann::json::object(), std::string id = "")
{
    Command c;
    c.verb = verb;
    c.args = std::move(args);
    c.request_id = std::move(id);
    return c;
}

Command parse(const std::string& text) { return command_from_json(nlohmann::json::parse(text)); }

double max_cloud_diff(const TaggedPointCloud& a, const TaggedPointCloud& b)
{
    EXPECT_EQ(a.size(), b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
        worst = std::max(worst, max_abs_diff(a.points[i], b.points[i]));
    return worst;
}

class SessionTest : public ::testing::Test {
protected:
    SessionEngine engine{default_config()};
};

TEST_F(SessionTest, StartsAtNeutralWithTrackerLocked)
{
    EXPECT_EQ(engine.state().sequence, 0u);
    EXPECT_EQ(engine.state().dofs, neutral_dofs(engine.config().geometry));
    const PoseDelta d = pose_delta(engine.state().tracker_pose, engine.state().tracker_truth);
    EXPECT_LT(d.distance_mm, 1e-6);
    EXPECT_LT(d.angle_deg, 1e-6);
    EXPECT_GT(engine.live_cloud_sensor().size(), 5000u);
    EXPECT_EQ(engine.live_cloud_sensor().frame, Frame::IRSensor);
}

TEST_F(SessionTest, ResetNeutralBumpsSequence)
{
    const Outcome o = engine.handle(make(Verb::ResetNeutral, {}, "x1"));
    EXPECT_TRUE(o.reply.ok);
    EXPECT_TRUE(o.mutated);
    EXPECT_EQ(o.reply.request_id, "x1");
    EXPECT_EQ(engine.state().sequence, 1u);
    EXPECT_EQ(engine.state().dofs, neutral_dofs(engine.config().geometry));
    ASSERT_EQ(o.events.size(), 1u);
    EXPECT_EQ(o.events[0].at("sequence"), 1);
}

TEST_F(SessionTest, SaveThenShowReproducesLiveCloud)
{
    ASSERT_TRUE(engine.handle(make(Verb::SetDofs, {{"preset", "inlet"}})).reply.ok);
    ASSERT_TRUE(engine.handle(make(Verb::SaveView, {{"name", "inlet"}})).reply.ok);
    ASSERT_TRUE(engine.handle(make(Verb::ShowView, {{"name", "inlet"}})).reply.ok);
    const auto shown = engine.shown_cloud_technician();
    ASSERT_TRUE(shown);
    EXPECT_EQ(shown->frame, Frame::Technician);
    EXPECT_LE(max_cloud_diff(*shown, engine.live_cloud_technician()), 1e-9);
}

TEST_F(SessionTest, UnknownViewIsRejectedWithoutStateChange)
{
    const std::string before = engine.snapshot().dump();
    const Outcome o = engine.handle(make(Verb::ShowView, {{"name", "nowhere"}}, "q"));
    EXPECT_FALSE(o.reply.ok);
    EXPECT_FALSE(o.mutated);
    EXPECT_TRUE(o.events.empty());
    EXPECT_NE(o.reply.error.find("nowhere"), std::string::npos);
    EXPECT_EQ(engine.state().sequence, 0u);
    EXPECT_EQ(engine.snapshot().dump(), before);
    const nlohmann::json j = to_json(o.reply);
    EXPECT_EQ(j.at("ok"), false);
    EXPECT_EQ(j.at("request_id"), "q");
    EXPECT_FALSE(j.contains("data"));
}

TEST_F(SessionTest, OutOfRangeMotionIsAtomic)
{
    ASSERT_TRUE(engine.handle(make(Verb::AdjustDof, {{"dof", "orbital"}, {"delta", 30.0}})).reply.ok);
    const CArmDofs before = engine.state().dofs;
    const Outcome o = engine.handle(make(Verb::AdjustDof, {{"dof", "orbital"}, {"delta", 80.0}}));
    EXPECT_FALSE(o.reply.ok);
    EXPECT_EQ(engine.state().dofs, before);
    EXPECT_EQ(engine.state().sequence, 1u);
    EXPECT_FALSE(engine.handle(make(Verb::SetDofs, {{"dofs", {{"swivel", 13.0}}}})).reply.ok);
    EXPECT_FALSE(engine.handle(make(Verb::SetDofs, {{"preset", "sideways"}})).reply.ok);
    EXPECT_FALSE(engine.handle(make(Verb::AdjustDof, {{"dof", "bogus"}, {"delta", 1.0}})).reply.ok);
    EXPECT_EQ(engine.state().dofs, before);
}

TEST_F(SessionTest, SetDofsAcceptsPartialObjectAndPreset)
{
    ASSERT_TRUE(engine.handle(make(Verb::SetDofs, {{"dofs", {{"orbital", 12.5}}}})).reply.ok);
    EXPECT_DOUBLE_EQ(engine.state().dofs.orbital, 12.5);
    EXPECT_DOUBLE_EQ(engine.state().dofs.column_height, neutral_dofs(engine.config().geometry).column_height);
    ASSERT_TRUE(engine.handle(make(Verb::SetDofs, {{"preset", "outlet"}})).reply.ok);
    EXPECT_EQ(engine.state().dofs, preset_dofs("outlet", engine.config().geometry));
}

TEST(CommandParsing, Envelope)
{
    const Command c = parse(R"({"type":"cmd","verb":"save_view","args":{"name":"a"},"request_id":7})");
    EXPECT_EQ(c.verb, Verb::SaveView);
    EXPECT_EQ(c.request_id, "7");
    EXPECT_EQ(command_from_json(to_json(c)).args, c.args);
    EXPECT_EQ(parse(R"({"verb":"hide_view"})").verb, Verb::HideView);

    EXPECT_THROW(parse(R"({"verb":"fly"})"), CommandError);
    EXPECT_THROW(parse(R"({"type":"snapshot","verb":"hide_view"})"), CommandError);
    EXPECT_THROW(parse(R"([1,2])"), CommandError);
    EXPECT_THROW(parse(R"({"verb":"save_view"})"), CommandError);
    EXPECT_THROW(parse(R"({"verb":"save_view","args":{"name":""}})"), CommandError);
    EXPECT_THROW(parse(R"({"verb":"save_view","args":{"name":3}})"), CommandError);
    EXPECT_THROW(parse(R"({"verb":"hide_view","args":{"name":"a"}})"), CommandError);
    EXPECT_THROW(parse(R"({"verb":"adjust_dof","args":{"dof":"orbital","delta":"5"}})"), CommandError);
    EXPECT_THROW(parse(R"({"verb":"set_dofs","args":{}})"), CommandError);
    EXPECT_THROW(parse(R"({"verb":"set_dofs","args":{"preset":"inlet","dofs":{}}})"), CommandError);
    EXPECT_THROW(parse(R"({"verb":"set_tracker_pose","args":{}})"), CommandError);
    EXPECT_THROW(parse(R"({"verb":"hide_view","args":[]})"), CommandError);
}

TEST(CommandParsing, VerbNamesRoundTrip)
{
    for (int i = 0; i <= static_cast<int>(Verb::SetTrackerPose); ++i) {
        const auto v = static_cast<Verb>(i);
        EXPECT_EQ(verb_from_string(to_string(v)), v);
    }
    EXPECT_FALSE(verb_from_string("SAVE_VIEW"));
}

TEST_F(SessionTest, ToggleAndHide)
{
    EXPECT_TRUE(engine.state().live_visible);
    engine.handle(make(Verb::ToggleLive));
    EXPECT_FALSE(engine.state().live_visible);
    EXPECT_TRUE(engine.snapshot().at("live_cloud").is_null());
    engine.handle(make(Verb::ToggleLive, {{"visible", true}}));
    EXPECT_TRUE(engine.state().live_visible);

    engine.handle(make(Verb::SaveView, {{"name", "a"}}));
    engine.handle(make(Verb::ShowView, {{"name", "a"}}));
    EXPECT_EQ(engine.state().shown_view, "a");
    const Outcome o = engine.handle(make(Verb::HideView));
    EXPECT_EQ(o.reply.data.at("hidden"), "a");
    EXPECT_FALSE(engine.state().shown_view);
    EXPECT_FALSE(engine.shown_cloud_technician());
}

TEST_F(SessionTest, XrayCountsAreConserved)
{
    std::mt19937_64 rng(5);
    int accepted = 0;
    for (int i = 0; i < 60; ++i) {
        const std::string view = (rng() % 3 == 0) ? "a" : "b";
        nlohmann::json args{{"view", view}};
        if (rng() % 4 == 0) args["purpose"] = "verification";
        if (rng() % 7 == 0) args["purpose"] = "curiosity";
        accepted += engine.handle(make(Verb::AcquireXray, args)).reply.ok ? 1 : 0;
    }
    int total = 0;
    for (const auto& [v, n] : engine.state().xray_counts) total += n;
    EXPECT_EQ(total, accepted);
    EXPECT_EQ(engine.state().acquisitions.size(), static_cast<std::size_t>(accepted));
    EXPECT_EQ(engine.state().sequence, static_cast<std::uint64_t>(accepted));
}

TEST_F(SessionTest, AcquireDefaultsToShownView)
{
    EXPECT_FALSE(engine.handle(make(Verb::AcquireXray)).reply.ok);
    engine.handle(make(Verb::SaveView, {{"name", "a"}}));
    engine.handle(make(Verb::ShowView, {{"name", "a"}}));
    const Outcome o = engine.handle(make(Verb::AcquireXray));
    ASSERT_TRUE(o.reply.ok);
    EXPECT_EQ(o.reply.data.at("view"), "a");
    EXPECT_EQ(o.reply.data.at("purpose"), "repositioning");
    EXPECT_EQ(o.reply.data.at("keypoints").size(), 4u);
}

TEST_F(SessionTest, AlignmentAtSavedPoseIsIdentity)
{
    engine.handle(make(Verb::SetDofs, {{"preset", "inlet"}}));
    engine.handle(make(Verb::SaveView, {{"name", "inlet"}}));
    const Outcome o = engine.handle(make(Verb::RequestAlignment, {{"name", "inlet"}}));
    ASSERT_TRUE(o.reply.ok) << o.reply.error;
    ASSERT_TRUE(engine.state().alignment);
    EXPECT_LT(pose_delta(engine.state().alignment->delta, RigidTransform{}).distance_mm, 1e-6);
    EXPECT_EQ(o.reply.data.at("band"), "green");
    EXPECT_EQ(engine.state().alignment_view, "inlet");
}

TEST_F(SessionTest, AlignmentHintUndoesBaseMotion)
{
    const auto& geom = engine.config().geometry;
    engine.handle(make(Verb::SetDofs, {{"preset", "inlet"}}));
    engine.handle(make(Verb::SaveView, {{"name", "inlet"}}));
    engine.handle(make(Verb::AdjustDof, {{"dof", "base_x"}, {"delta", 40.0}}));
    engine.handle(make(Verb::AdjustDof, {{"dof", "base_y"}, {"delta", -25.0}}));
    const Outcome o = engine.handle(make(Verb::RequestAlignment, {{"name", "inlet"}}));
    ASSERT_TRUE(o.reply.ok) << o.reply.error;
    const AlignmentReport& rep = *engine.state().alignment;
    ASSERT_TRUE(rep.dof_hints);
    ASSERT_TRUE(rep.dof_hints->reliable) << rep.dof_hints->reason;

    CArmDofs next = engine.state().dofs;
    for (std::size_t i = 0; i < kDofCount; ++i) next[i] += rep.dof_hints->increments[i];
    const RigidTransform g_saved = forward_kinematics(preset_dofs("inlet", geom), geom).gantry;
    const PoseDelta before = pose_delta(forward_kinematics(engine.state().dofs, geom).gantry, g_saved);
    const PoseDelta after = pose_delta(forward_kinematics(next, geom).gantry, g_saved);
    EXPECT_NEAR(before.distance_mm, std::hypot(40.0, 25.0), 1e-9);
    // Re-rendered clouds sample the surface differently, which leaves a few mm.
    EXPECT_LT(after.distance_mm, 5.0);
    EXPECT_LT(after.angle_deg, 0.5);
}

TEST_F(SessionTest, RequestAlignmentNeedsAView)
{
    EXPECT_FALSE(engine.handle(make(Verb::RequestAlignment)).reply.ok);
    EXPECT_FALSE(engine.handle(make(Verb::RequestAlignment, {{"name", "x"}})).reply.ok);
}

TEST_F(SessionTest, TrackerFollowsHeadMotionAndViewStaysPut)
{
    engine.handle(make(Verb::SetDofs, {{"preset", "outlet"}}));
    engine.handle(make(Verb::SaveView, {{"name", "outlet"}}));
    engine.handle(make(Verb::ShowView, {{"name", "outlet"}}));
    std::mt19937_64 rng(11);
    const RigidTransform home = engine.config().initial_tracker_pose;
    for (int i = 0; i < 5; ++i) {
        const RigidTransform truth = home * testing::random_transform(rng, 8.0, 150.0);
        const Outcome o = engine.handle(make(Verb::SetTrackerPose, {{"pose", transform_to_json(truth)}}));
        ASSERT_TRUE(o.reply.ok) << o.reply.error;
        const PoseDelta d = pose_delta(engine.state().tracker_pose, truth);
        EXPECT_LT(d.distance_mm, 1e-6);
        // Nothing but the head moved: live and saved points all lie on the same world surface.
        const SurfaceModel surface = surface_model(engine.state().dofs, engine.config().geometry);
        const TaggedPointCloud live = engine.live_cloud_technician();
        ASSERT_FALSE(live.empty());
        double worst = 0.0;
        for (const auto& p : live.points)
            worst = std::max(worst, distance_to_surface(surface, engine.state().tracker_pose.apply(p)));
        const TaggedPointCloud shown = *engine.shown_cloud_technician();
        for (const auto& p : shown.points)
            worst = std::max(worst, distance_to_surface(surface, engine.state().tracker_pose.apply(p)));
        EXPECT_LT(worst, 1e-6);
    }
}

TEST_F(SessionTest, MatrixFormOfTrackerPose)
{
    const RigidTransform truth = engine.config().initial_tracker_pose * RigidTransform::from_translation(10, 0, 0);
    ASSERT_TRUE(engine.handle(make(Verb::SetTrackerPose, {{"matrix", transform_to_matrix_json(truth)}})).reply.ok);
    EXPECT_LT(pose_delta(engine.state().tracker_truth, truth).distance_mm, 1e-12);
}

TEST_F(SessionTest, SnapshotShape)
{
    engine.handle(make(Verb::SaveView, {{"name", "a"}}));
    engine.handle(make(Verb::ShowView, {{"name", "a"}}));
    const nlohmann::json s = engine.snapshot();
    EXPECT_EQ(s.at("type"), "snapshot");
    EXPECT_EQ(s.at("sequence"), 2);
    EXPECT_EQ(s.at("views"), nlohmann::json::array({"a"}));
    EXPECT_EQ(s.at("shown_view"), "a");
    EXPECT_EQ(s.at("live_cloud").at("frame"), "Technician");
    EXPECT_EQ(s.at("shown_cloud").at("frame"), "Technician");
    EXPECT_EQ(s.at("dof_ranges").at("orbital"), nlohmann::json::array({-95.0, 95.0}));
    EXPECT_TRUE(s.at("dof_ranges").at("base_x").at(0).is_null());
    for (const char* k : {"gantry", "source", "detector", "tracker", "tracker_truth"})
        EXPECT_EQ(s.at("poses").at(k).size(), 4u) << k;
    EXPECT_EQ(s.at("live_cloud").at("total"), engine.live_cloud_sensor().size());
}

TEST(SessionSnapshot, CloudsAreDecimated)
{
    SessionConfig c = default_config();
    c.max_snapshot_points = 500;
    SessionEngine e(c);
    const nlohmann::json s = e.snapshot();
    EXPECT_EQ(s.at("live_cloud").at("points").size(), 500u);
    EXPECT_GT(s.at("live_cloud").at("total").get<std::size_t>(), 500u);
}

TEST(Decimate, EvenStride)
{
    std::vector<Vec3> pts;
    for (int i = 0; i < 10; ++i) pts.emplace_back(i, 0, 0);
    const auto d = decimate(pts, 4);
    ASSERT_EQ(d.size(), 4u);
    EXPECT_EQ(d[0].x(), 0);
    EXPECT_EQ(d[1].x(), 2);
    EXPECT_EQ(d[2].x(), 5);
    EXPECT_EQ(d[3].x(), 7);
    EXPECT_EQ(decimate(pts, 20).size(), 10u);
}

TEST(SessionNoise, DeterministicUnderSeed)
{
    SessionConfig c = default_config();
    c.depth_noise_mm = 1.0;
    c.pixel_noise_px = 0.5;
    SessionEngine a(c), b(c);
    const Command cmd = make(Verb::SetTrackerPose,
                             {{"pose", transform_to_json(c.initial_tracker_pose * RigidTransform::from_translation(5, 5, 0))}});
    a.handle(cmd);
    b.handle(cmd);
    EXPECT_EQ(a.snapshot().dump(), b.snapshot().dump());
    EXPECT_GT(a.state().tracker_rms_px, 0.1);
    c.seed = 2;
    SessionEngine other(c);
    other.handle(cmd);
    EXPECT_NE(a.snapshot().dump(), other.snapshot().dump());
}

TEST(Replay, EmptyLogLeavesFreshState)
{
    SessionEngine e(default_config());
    std::istringstream in("\n  \n");
    replay_commands(e, in, "empty.jsonl");
    EXPECT_EQ(e.snapshot().dump(), SessionEngine(default_config()).snapshot().dump());
}

TEST(Replay, MalformedLineIsCited)
{
    SessionEngine e(default_config());
    std::istringstream in(
        "{\"verb\":\"reset_neutral\"}\n{\"verb\":\"toggle_live\"}\n{\"verb\":\"toggle_live\"\n{\"verb\":\"hide_view\"}\n");
    try {
        replay_commands(e, in, "cmds.jsonl");
        FAIL() << "expected ParseError";
    } catch (const ParseError& err) {
        EXPECT_NE(std::string(err.what()).find("cmds.jsonl:3:"), std::string::npos) << err.what();
    }
    EXPECT_EQ(e.state().sequence, 2u);

    std::istringstream bad_verb("{\"verb\":\"reset_neutral\"}\n{\"verb\":\"warp\"}\n");
    SessionEngine f(default_config());
    EXPECT_THROW(replay_commands(f, bad_verb, "v.jsonl"), ParseError);
}

TEST(Replay, RandomCommandsReproduceSnapshot)
{
    const SessionConfig config = default_config();
    std::mt19937_64 rng(2024);
    SessionEngine live(config);
    std::ostringstream log;
    int rejected = 0;
    for (int i = 0; i < 60; ++i) {
        const Command cmd = testing::random_command(rng, config.initial_tracker_pose);
        log << to_json(cmd).dump() << '\n';
        rejected += live.handle(cmd).reply.ok ? 0 : 1;
    }
    EXPECT_GT(rejected, 0);
    EXPECT_LT(rejected, 60);

    SessionEngine replayed(config);
    std::istringstream in(log.str());
    replay_commands(replayed, in, "random.jsonl");
    EXPECT_EQ(replayed.state().sequence, live.state().sequence);
    EXPECT_EQ(replayed.snapshot().dump(), live.snapshot().dump());
}

TEST(Replay, RecorderWritesOneLinePerCommand)
{
    const auto path = std::filesystem::temp_directory_path() / "carm_recorder_test.jsonl";
    {
        CommandRecorder rec(path);
        rec.record(make(Verb::ResetNeutral, {}, "1"));
        rec.record(make(Verb::SaveView, {{"name", "a"}}, "2"));
    }
    const std::string text = read_text_file(path);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
    SessionEngine e(default_config());
    replay_log(e, path);
    EXPECT_EQ(e.state().sequence, 2u);
    EXPECT_TRUE(e.state().registry.contains("a"));
    std::filesystem::remove(path);
    EXPECT_THROW(CommandRecorder(std::filesystem::path("/nonexistent/dir/x.jsonl")), IoError);
}

TEST_F(SessionTest, ViewReportComparesLastShotWithSavedState)
{
    engine.handle(make(Verb::SetDofs, {{"preset", "inlet"}}));
    engine.handle(make(Verb::SaveView, {{"name", "inlet"}}));
    engine.handle(make(Verb::AdjustDof, {{"dof", "base_x"}, {"delta", 30.0}}));
    engine.handle(make(Verb::AcquireXray, {{"view", "inlet"}}));
    engine.handle(make(Verb::AdjustDof, {{"dof", "base_x"}, {"delta", -27.0}}));
    engine.handle(make(Verb::AdjustDof, {{"dof", "base_y"}, {"delta", 4.0}}));
    engine.handle(make(Verb::AcquireXray, {{"view", "inlet"}}));
    engine.handle(make(Verb::AcquireXray, {{"view", "outlet"}}));

    const std::string csv = view_report_csv(engine);
    std::istringstream in(csv);
    std::string header, inlet, outlet;
    std::getline(in, header);
    std::getline(in, inlet);
    std::getline(in, outlet);
    EXPECT_EQ(header, "view,xray_count,dist_mm,angle_deg,final_px");
    // The base moved (3, 4) mm in its own plane: 5 mm, no rotation.
    EXPECT_EQ(inlet.substr(0, inlet.rfind(',')), "inlet,2,5.0000,0.0000");
    EXPECT_EQ(outlet, "outlet,1,,,");
}

TEST(Config, JsonRoundTripAndUnknownKeys)
{
    const SessionConfig c = default_config();
    const nlohmann::json j = to_json(c);
    EXPECT_EQ(to_json(config_from_json(j)).dump(), j.dump());
    EXPECT_THROW(config_from_json({{"colour", "red"}}), ParseError);
    EXPECT_THROW(config_from_json({{"depth_noise_mm", -1.0}}), InvalidArgumentError);
    EXPECT_EQ(config_from_json({{"seed", 9}}).seed, 9u);
}

TEST(Config, PrecedenceFlagThenEnvThenDefaults)
{
    const auto dir = std::filesystem::temp_directory_path();
    const auto env_path = dir / "carm_env_config.json";
    const auto flag_path = dir / "carm_flag_config.json";
    std::ofstream(env_path) << R"({"seed": 41})";
    std::ofstream(flag_path) << R"({"seed": 42})";

    ::unsetenv(kConfigEnvVar);
    EXPECT_EQ(resolve_config(std::nullopt).seed, default_config().seed);
    ::setenv(kConfigEnvVar, env_path.c_str(), 1);
    EXPECT_EQ(resolve_config(std::nullopt).seed, 41u);
    EXPECT_EQ(resolve_config(flag_path).seed, 42u);
    ::unsetenv(kConfigEnvVar);

    std::ofstream(flag_path) << R"({"seed": )";
    try {
        load_config(flag_path);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find(flag_path.string()), std::string::npos);
    }
    std::filesystem::remove(env_path);
    std::filesystem::remove(flag_path);
}

}  // namespace
}  // namespace carm
