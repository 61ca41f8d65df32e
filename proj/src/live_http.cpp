#include <httplib.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <condition_variable>
#include <ctime>
#include <mutex>
#include <thread>

#include "gridvirt/device.hpp"
#include "gridvirt/http_server.hpp"
#include "gridvirt/service.hpp"

namespace gridvirt {

namespace {

std::string lowercase(std::string text) {
    std::transform(text.begin(), text.end(), text.begin(), [](unsigned char c) { return std::tolower(c); });
    return text;
}

HttpResponse send_with(httplib::Client& client, const HttpRequest& req) {
    httplib::Headers headers;
    for (const auto& [name, value] : req.headers) {
        if (name == "content-length" || name == "host") continue;
        headers.emplace(name, value);
    }
    httplib::Result result = req.method == "GET"
                                 ? client.Get(req.target(), headers)
                                 : client.Post(req.target(), headers, req.body, "application/json");
    if (!result) {
        return error_response(WireError{ErrorCode::Unavailable, "transport: " + httplib::to_string(result.error())});
    }
    return HttpResponse{result->status, result->body};
}

Timestamp wall_now() { return static_cast<Timestamp>(std::time(nullptr)); }

}  // namespace

// --- client side ------------------------------------------------------------

struct HttpTransport::Impl {
    httplib::Client client;
    std::mutex mutex;
    Impl(const std::string& host, int port) : client(host, port) {}
};

HttpTransport::HttpTransport(std::string host, int port) : impl_(std::make_unique<Impl>(host, port)) {
    impl_->client.set_connection_timeout(5);
    impl_->client.set_read_timeout(30);
}

HttpTransport::~HttpTransport() = default;

HttpResponse HttpTransport::send(const HttpRequest& req) {
    std::lock_guard lock(impl_->mutex);
    return send_with(impl_->client, req);
}

std::vector<BatchTiming> LiveHttpTarget::submit(const std::vector<HttpRequest>& requests, double at_ms) {
    std::vector<std::optional<ErrorCode>> errors(requests.size());
    const auto records = run_live_batch(workers_, static_cast<int>(requests.size()), [&](std::int64_t i) {
        thread_local std::unique_ptr<httplib::Client> client;
        if (!client) client = std::make_unique<httplib::Client>(host_, port_);
        const auto resp = send_with(*client, requests[static_cast<std::size_t>(i)]);
        if (!resp.ok()) errors[static_cast<std::size_t>(i)] = wire_error_of(resp).code;
    });
    std::vector<BatchTiming> out(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        out[i].send_ms = at_ms + records[i].start_ms;
        out[i].completion_ms = at_ms + records[i].completion_ms;
        out[i].error = errors[i];
    }
    return out;
}

// --- server side ------------------------------------------------------------

struct HttpServer::Impl {
    httplib::Server server;
    std::thread ticker;
    std::mutex mutex;
    std::condition_variable stopped;
};

HttpServer::HttpServer(Platform& platform) : impl_(std::make_unique<Impl>()), platform_(platform) {
    const auto handler = [this](const httplib::Request& in, httplib::Response& out) {
        HttpRequest req;
        req.method = in.method;
        req.path = in.path;
        for (const auto& [name, value] : in.params) req.query.emplace_back(name, value);
        for (const auto& [name, value] : in.headers) req.headers[lowercase(name)] = value;
        req.body = in.body;
        platform_.set_now(wall_now());
        const auto resp = platform_.handle(req);
        out.status = resp.status;
        out.set_content(resp.body, "application/json");
    };
    // httplib's default also sets SO_REUSEPORT, which lets a second server
    // share an occupied port.
    impl_->server.set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof(yes));
    });
    impl_->server.Get(".*", handler);
    impl_->server.Post(".*", handler);
}

HttpServer::~HttpServer() { stop(); }

bool HttpServer::bind(const std::string& host, int port) {
    if (port == 0) {
        port_ = impl_->server.bind_to_any_port(host);
        return port_ > 0;
    }
    if (!impl_->server.bind_to_port(host, port)) return false;
    port_ = port;
    return true;
}

void HttpServer::run() {
    running_ = true;
    impl_->ticker = std::thread([this]() {
        std::unique_lock lock(impl_->mutex);
        while (running_) {
            platform_.tick(wall_now());
            impl_->stopped.wait_for(lock, std::chrono::seconds(1), [this]() { return !running_; });
        }
    });
    impl_->server.listen_after_bind();
}

void HttpServer::stop() {
    {
        std::lock_guard lock(impl_->mutex);
        running_ = false;
    }
    impl_->stopped.notify_all();
    impl_->server.stop();
    if (impl_->ticker.joinable()) impl_->ticker.join();
}

}  // namespace gridvirt
