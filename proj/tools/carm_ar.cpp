#include "carm/config.hpp"
#include "carm/evaluation.hpp"
#include "carm/io.hpp"
#include "carm/service.hpp"
#include "carm/session.hpp"
#include "carm/simulation.hpp"
#include "carm/ws_server.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>

namespace {

using namespace carm;

void write_file(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::optional<std::filesystem::path> optional_path(const std::string& s)
{
    if (s.empty()) return std::nullopt;
    return std::filesystem::path(s);
}

int serve(const std::string& address, unsigned short port, const std::string& config_path, const std::string& record)
{
    // Block termination signals before any thread starts so only sigwait sees them.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    SessionService service(resolve_config(optional_path(config_path)), optional_path(record));
    WsServer server(service, address, port);
    server.start();
    spdlog::info("serving on ws://{}:{}", address, server.port());
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("shutting down");
    server.stop();
    service.stop();
    return 0;
}

int replay(const std::string& log, const std::string& report, const std::string& config_path)
{
    SessionEngine engine(resolve_config(optional_path(config_path)));
    replay_log(engine, log);
    const std::string csv = view_report_csv(engine);
    if (report.empty())
        std::cout << csv;
    else
        write_file(report, csv);
    std::cerr << "replayed to sequence " << engine.state().sequence << "\n";
    return 0;
}

int evaluate(const std::string& log, const std::string& scenario_path, const std::string& out,
             const std::string& summary_path, const std::string& config_path)
{
    const SessionConfig config = resolve_config(optional_path(config_path));
    const StudyScenario scenario = load_scenario(scenario_path, config.geometry);
    const StudyReport report = run_study(scenario, load_run_log(log), config.geometry);
    write_file(out, to_csv(report));
    const std::string summary = summary_json(report).dump(2) + "\n";
    if (summary_path.empty())
        std::cout << summary;
    else
        write_file(summary_path, summary);
    return 0;
}

int simulate(const std::string& scenario_path, bool headless, std::uint64_t seed, const std::string& operator_path,
             const std::string& log_out, const std::string& report_out, const std::string& config_path)
{
    if (!headless) throw InvalidArgumentError("interactive simulation runs through the operator UI; use `serve`");
    const SessionConfig config = resolve_config(optional_path(config_path));
    const StudyScenario scenario = load_scenario(scenario_path, config.geometry);
    OperatorModel model;
    if (!operator_path.empty()) {
        try {
            model = operator_model_from_json(nlohmann::json::parse(read_text_file(operator_path)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(operator_path + ": " + e.what());
        }
    }
    const RunLog log = simulate_study(scenario, config, model, seed);
    const std::string lines = to_json_lines(log);
    if (log_out.empty())
        std::cout << lines;
    else
        write_file(log_out, lines);
    if (!report_out.empty()) write_file(report_out, to_csv(run_study(scenario, log, config.geometry)));
    return 0;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Marker-free C-arm repositioning simulator"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "session config JSON (else $" + std::string(kConfigEnvVar) + ")");
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

    auto* serve_cmd = app.add_subcommand("serve", "run the WebSocket session server");
    unsigned short port = 8765;
    std::string address = "127.0.0.1";
    std::string record;
    serve_cmd->add_option("--port", port, "TCP port, 0 picks a free one");
    serve_cmd->add_option("--address", address, "listen address");
    serve_cmd->add_option("--config", config_path, "session config JSON");
    serve_cmd->add_option("--record", record, "append every command to this JSON-lines log");

    auto* replay_cmd = app.add_subcommand("replay", "re-run a recorded command log");
    std::string log_path, report_path;
    replay_cmd->add_option("--log", log_path, "command log (JSON lines)")->required();
    replay_cmd->add_option("--report", report_path, "per-view CSV (stdout if omitted)");
    replay_cmd->add_option("--config", config_path, "session config JSON");

    auto* eval_cmd = app.add_subcommand("eval", "score a study log against a scenario");
    std::string scenario_path, out_path, summary_path;
    eval_cmd->add_option("--log", log_path, "study event log (JSON lines)")->required();
    eval_cmd->add_option("--scenario", scenario_path, "scenario JSON")->required();
    eval_cmd->add_option("--out", out_path, "per-view CSV")->required();
    eval_cmd->add_option("--summary", summary_path, "summary JSON (stdout if omitted)");
    eval_cmd->add_option("--config", config_path, "session config JSON");

    auto* sim_cmd = app.add_subcommand("simulate", "play a study with a simulated technician");
    bool headless = false;
    std::uint64_t seed = 1;
    std::string operator_path;
    sim_cmd->add_option("--scenario", scenario_path, "scenario JSON")->required();
    sim_cmd->add_flag("--headless", headless, "no operator UI");
    sim_cmd->add_option("--seed", seed, "random seed");
    sim_cmd->add_option("--operator", operator_path, "operator model JSON");
    sim_cmd->add_option("--log-out", log_path, "write the event log here (stdout if omitted)");
    sim_cmd->add_option("--report", report_path, "also score the log into this CSV");
    sim_cmd->add_option("--config", config_path, "session config JSON");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_default_logger(spdlog::default_logger()->clone("carm"));
    spdlog::set_level(spdlog::level::from_str(log_level));
    // Logs go to stderr so stdout stays machine-readable.
    spdlog::default_logger()->sinks().clear();
    spdlog::default_logger()->sinks().push_back(std::make_shared<spdlog::sinks::stderr_color_sink_mt>());

    try {
        if (*serve_cmd) return serve(address, port, config_path, record);
        if (*replay_cmd) return replay(log_path, report_path, config_path);
        if (*eval_cmd) return evaluate(log_path, scenario_path, out_path, summary_path, config_path);
        if (*sim_cmd)
            return simulate(scenario_path, headless, seed, operator_path, log_path, report_path, config_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
