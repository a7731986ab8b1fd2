#include "carm/service.hpp"

#include <spdlog/spdlog.h>

namespace carm {

SessionService::SessionService(SessionConfig config, std::optional<std::filesystem::path> record_path)
    : engine_(std::move(config))
{
    if (record_path) recorder_ = std::make_unique<CommandRecorder>(*record_path);
    worker_ = std::thread([this] { run(); });
}

SessionService::~SessionService() { stop(); }

void SessionService::stop()
{
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    cv_.notify_all();
    if (worker_.joinable()) worker_.join();
}

void SessionService::post(Task task)
{
    {
        std::lock_guard lock(mutex_);
        if (stopping_) throw Error("session service is stopped");
        queue_.push_back(std::move(task));
    }
    cv_.notify_one();
}

void SessionService::run()
{
    for (;;) {
        Task task;
        {
            std::unique_lock lock(mutex_);
            cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (queue_.empty()) return;
            task = std::move(queue_.front());
            queue_.pop_front();
        }
        try {
            task(engine_);
        } catch (const std::exception& e) {
            spdlog::error("session task failed: {}", e.what());
        }
    }
}

void SessionService::submit(Command cmd, CommandDone done)
{
    post([this, cmd = std::move(cmd), done = std::move(done)](SessionEngine& engine) {
        if (recorder_) recorder_->record(cmd);
        const Outcome outcome = engine.handle(cmd);
        if (outcome.mutated) {
            const nlohmann::json snap = engine.snapshot(outcome.events);
            std::lock_guard lock(listeners_mutex_);
            for (const auto& [id, listener] : listeners_) listener(snap);
        }
        if (done) done(outcome);
    });
}

std::future<Outcome> SessionService::submit(Command cmd)
{
    auto promise = std::make_shared<std::promise<Outcome>>();
    auto future = promise->get_future();
    submit(std::move(cmd), [promise](const Outcome& o) { promise->set_value(o); });
    return future;
}

void SessionService::request_snapshot(SnapshotListener done)
{
    post([done = std::move(done)](SessionEngine& engine) { done(engine.snapshot()); });
}

nlohmann::json SessionService::snapshot()
{
    auto promise = std::make_shared<std::promise<nlohmann::json>>();
    auto future = promise->get_future();
    request_snapshot([promise](const nlohmann::json& s) { promise->set_value(s); });
    return future.get();
}

std::uint64_t SessionService::subscribe(SnapshotListener listener)
{
    std::lock_guard lock(listeners_mutex_);
    const std::uint64_t id = next_listener_++;
    listeners_.emplace(id, std::move(listener));
    return id;
}

void SessionService::unsubscribe(std::uint64_t id)
{
    std::lock_guard lock(listeners_mutex_);
    listeners_.erase(id);
}

}  // namespace carm
