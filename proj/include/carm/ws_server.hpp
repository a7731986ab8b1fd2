#pragma once

#include "carm/service.hpp"

#include <memory>
#include <string>

namespace carm {

/// WebSocket front end for a SessionService.
///
/// Client -> server: {"type":"cmd","verb":...,"args":{...},"request_id":...}
///                   {"type":"get_snapshot"}
/// Server -> client: {"type":"reply",...} to the sender of a command,
///                   {"type":"snapshot",...} on connect and to everyone after each change.
class WsServer {
public:
    /// Port 0 picks a free port; see port().
    WsServer(SessionService& service, const std::string& address, unsigned short port);
    ~WsServer();

    WsServer(const WsServer&) = delete;
    WsServer& operator=(const WsServer&) = delete;

    unsigned short port() const;

    /// Serves on a background thread.
    void start();
    /// Serves on the calling thread until stop().
    void run();
    void stop();

    struct Impl;

private:
    std::shared_ptr<Impl> impl_;
};

/// Parses one client text frame and routes it. Exposed for tests.
/// Returns the immediate reply for malformed frames, or nullopt when the
/// frame was handed to the service.
std::optional<nlohmann::json> parse_client_frame(const std::string& text, Command& out, bool& wants_snapshot);

}  // namespace carm
