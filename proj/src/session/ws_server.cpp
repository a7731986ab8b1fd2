#include "carm/ws_server.hpp"

#include "carm/io.hpp"

#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include <atomic>
#include <set>

namespace carm {

namespace beast = boost::beast;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

std::optional<nlohmann::json> parse_client_frame(const std::string& text, Command& out, bool& wants_snapshot)
{
    wants_snapshot = false;
    nlohmann::json j;
    std::string request_id;
    try {
        j = nlohmann::json::parse(text);
        if (j.is_object() && j.contains("request_id")) {
            const auto& id = j.at("request_id");
            request_id = id.is_string() ? id.get<std::string>() : id.dump();
        }
        if (j.is_object() && j.value("type", std::string()) == "get_snapshot") {
            wants_snapshot = true;
            return std::nullopt;
        }
        out = command_from_json(j);
        return std::nullopt;
    } catch (const std::exception& e) {
        Reply r;
        r.request_id = request_id;
        r.error = e.what();
        return to_json(r);
    }
}

namespace {

class Connection;

}  // namespace

struct WsServer::Impl : std::enable_shared_from_this<WsServer::Impl> {
    SessionService& service;
    net::io_context ioc{1};
    tcp::acceptor acceptor{ioc};
    std::set<std::shared_ptr<Connection>> connections;
    std::uint64_t subscription = 0;
    std::uint64_t next_client = 1;
    unsigned short port = 0;
    std::thread thread;
    std::atomic<bool> stopped{false};
    std::atomic<bool> running{false};

    explicit Impl(SessionService& s) : service(s) {}

    void accept();
    void broadcast(std::shared_ptr<const std::string> text);
};

namespace {

class Connection : public std::enable_shared_from_this<Connection> {
public:
    Connection(tcp::socket socket, std::shared_ptr<WsServer::Impl> server, std::string client_id)
        : ws_(std::move(socket)), server_(std::move(server)), client_id_(std::move(client_id))
    {
    }

    void start()
    {
        server_->connections.insert(shared_from_this());
        ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
        ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    }

    void send(std::shared_ptr<const std::string> text)
    {
        if (closed_) return;
        queue_.push_back(std::move(text));
        if (queue_.size() == 1) write_next();
    }

    void close()
    {
        closed_ = true;
        beast::error_code ec;
        beast::get_lowest_layer(ws_).socket().close(ec);
    }

private:
    void on_accept(beast::error_code ec)
    {
        if (ec) return drop();
        spdlog::info("client {} connected", client_id_);
        send_snapshot();
        read();
    }

    void send_snapshot()
    {
        auto server = server_;
        std::weak_ptr<Connection> weak = shared_from_this();
        server_->service.request_snapshot([server, weak](const nlohmann::json& snap) {
            auto text = std::make_shared<const std::string>(snap.dump());
            net::post(server->ioc, [weak, text] {
                if (auto c = weak.lock()) c->send(text);
            });
        });
    }

    void read()
    {
        ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) { self->on_read(ec); });
    }

    void on_read(beast::error_code ec)
    {
        if (ec) return drop();
        const std::string text = beast::buffers_to_string(buffer_.data());
        buffer_.consume(buffer_.size());

        Command cmd;
        bool wants_snapshot = false;
        if (auto error = parse_client_frame(text, cmd, wants_snapshot)) {
            send(std::make_shared<const std::string>(error->dump()));
        } else if (wants_snapshot) {
            send_snapshot();
        } else {
            cmd.client_id = client_id_;
            auto server = server_;
            std::weak_ptr<Connection> weak = shared_from_this();
            try {
                server_->service.submit(std::move(cmd), [server, weak](const Outcome& o) {
                    auto text = std::make_shared<const std::string>(to_json(o.reply).dump());
                    net::post(server->ioc, [weak, text] {
                        if (auto c = weak.lock()) c->send(text);
                    });
                });
            } catch (const Error& e) {
                Reply r;
                r.request_id = cmd.request_id;
                r.error = e.what();
                send(std::make_shared<const std::string>(to_json(r).dump()));
            }
        }
        read();
    }

    void write_next()
    {
        ws_.text(true);
        ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
            if (ec) return self->drop();
            self->queue_.pop_front();
            if (!self->queue_.empty()) self->write_next();
        });
    }

    void drop()
    {
        if (server_->connections.erase(shared_from_this())) spdlog::info("client {} disconnected", client_id_);
        closed_ = true;
    }

    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buffer_;
    std::deque<std::shared_ptr<const std::string>> queue_;
    std::shared_ptr<WsServer::Impl> server_;
    std::string client_id_;
    bool closed_ = false;
};

}  // namespace

void WsServer::Impl::accept()
{
    acceptor.async_accept(ioc, [self = shared_from_this()](beast::error_code ec, tcp::socket socket) {
        if (ec) return;  // acceptor closed
        auto c = std::make_shared<Connection>(std::move(socket), self, "c" + std::to_string(self->next_client++));
        c->start();
        self->accept();
    });
}

void WsServer::Impl::broadcast(std::shared_ptr<const std::string> text)
{
    for (const auto& c : connections) c->send(text);
}

WsServer::WsServer(SessionService& service, const std::string& address, unsigned short port)
    : impl_(std::make_shared<Impl>(service))
{
    try {
        const tcp::endpoint endpoint(net::ip::make_address(address), port);
        impl_->acceptor.open(endpoint.protocol());
        impl_->acceptor.set_option(net::socket_base::reuse_address(true));
        impl_->acceptor.bind(endpoint);
        impl_->acceptor.listen();
        impl_->port = impl_->acceptor.local_endpoint().port();
    } catch (const std::exception& e) {
        throw IoError("cannot listen on " + address + ":" + std::to_string(port) + ": " + e.what());
    }
    std::weak_ptr<Impl> weak = impl_;
    impl_->subscription = service.subscribe([weak](const nlohmann::json& snap) {
        auto impl = weak.lock();
        if (!impl) return;
        auto text = std::make_shared<const std::string>(snap.dump());
        net::post(impl->ioc, [impl, text] { impl->broadcast(text); });
    });
    impl_->accept();
}

WsServer::~WsServer()
{
    stop();
    impl_->service.unsubscribe(impl_->subscription);
}

unsigned short WsServer::port() const { return impl_->port; }

void WsServer::start()
{
    impl_->running = true;
    impl_->thread = std::thread([impl = impl_] { impl->ioc.run(); });
}

void WsServer::run()
{
    impl_->running = true;
    impl_->ioc.run();
}

void WsServer::stop()
{
    if (impl_->stopped.exchange(true)) return;
    net::post(impl_->ioc, [impl = impl_] {
        beast::error_code ec;
        impl->acceptor.close(ec);
        for (const auto& c : impl->connections) c->close();
        impl->connections.clear();
    });
    if (impl_->thread.joinable()) {
        impl_->thread.join();
    } else if (!impl_->running) {
        // Never served: drain the aborted handlers here so nothing keeps the impl alive.
        impl_->ioc.restart();
        impl_->ioc.run();
    }
}

}  // namespace carm
