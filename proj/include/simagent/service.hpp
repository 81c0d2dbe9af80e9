#pragma once

#include "simagent/platform.hpp"

#include <memory>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace simagent {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080; // 0 picks a free port
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::filesystem::path data_root = "simagent-data";
    std::string planner = "scripted";
    std::optional<LlmConfig> llm;
    std::size_t max_tool_calls = 8;
};

// HTTP/JSON + SSE front end over a Platform. Routes add no semantics of their own.
class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Binds and starts serving on a background thread. Error naming the port when it is taken.
    void start();
    // Stops accepting requests; queued runs are cancelled, in-flight replications finish.
    void stop();

    int port() const { return port_; }
    Platform& platform() { return platform_; }
    Agent& agent() { return *agent_; }

private:
    void routes();

    ServiceConfig config_;
    Platform platform_;
    std::unique_ptr<Agent> agent_;
    std::unique_ptr<httplib::Server> server_;
    std::thread listener_;
    int port_ = 0;
    bool stopped_ = false;
};

} // namespace simagent
