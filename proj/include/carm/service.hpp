#pragma once

#include "carm/session.hpp"

#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

namespace carm {

/// Runs a SessionEngine on one worker thread. Commands from any thread are
/// queued and applied one at a time; after every state change the new
/// snapshot is pushed to subscribers, in sequence order, from the worker.
class SessionService {
public:
    using SnapshotListener = std::function<void(const nlohmann::json& snapshot)>;
    using CommandDone = std::function<void(const Outcome&)>;

    explicit SessionService(SessionConfig config, std::optional<std::filesystem::path> record_path = std::nullopt);
    ~SessionService();

    SessionService(const SessionService&) = delete;
    SessionService& operator=(const SessionService&) = delete;

    /// `done` runs on the worker after subscribers have seen the resulting snapshot.
    void submit(Command cmd, CommandDone done);
    std::future<Outcome> submit(Command cmd);

    void request_snapshot(SnapshotListener done);
    nlohmann::json snapshot();

    std::uint64_t subscribe(SnapshotListener listener);
    void unsubscribe(std::uint64_t id);

    /// Drains queued work and joins the worker. Later submissions throw.
    void stop();

private:
    using Task = std::function<void(SessionEngine&)>;
    void post(Task task);
    void run();

    SessionEngine engine_;
    std::unique_ptr<CommandRecorder> recorder_;

    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<Task> queue_;
    bool stopping_ = false;

    std::mutex listeners_mutex_;
    std::map<std::uint64_t, SnapshotListener> listeners_;
    std::uint64_t next_listener_ = 1;

    std::thread worker_;
};

}  // namespace carm
