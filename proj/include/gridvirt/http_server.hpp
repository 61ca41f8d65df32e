#pragma once

// HTTP front end for a Platform (used by `gridvirt serve`).

#include <atomic>
#include <memory>
#include <string>

#include "gridvirt/platform.hpp"

namespace gridvirt {

class HttpServer {
public:
    explicit HttpServer(Platform& platform);
    ~HttpServer();

    /// False when the address cannot be bound.
    bool bind(const std::string& host, int port);
    int port() const { return port_; }

    /// Serves until stop(); ticks the platform on the wall clock once a second.
    void run();
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    Platform& platform_;
    int port_ = 0;
    std::atomic<bool> running_{false};
};

}  // namespace gridvirt
