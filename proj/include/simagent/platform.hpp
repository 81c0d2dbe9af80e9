#pragma once

#include "simagent/agent.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace simagent {

// --data-root, else $SIMAGENT_DATA_ROOT, else ./simagent-data.
std::filesystem::path resolve_data_root(const std::optional<std::string>& flag);

// Creates the directory if needed; ConfigError when it cannot be written.
void ensure_writable(const std::filesystem::path& dir);

struct PlatformOptions {
    std::filesystem::path data_root;
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    std::function<void(const ProbeEvent&)> probe;
};

// Everything a front end needs, wired over one data root:
// <root>/scenarios, <root>/runs, <root>/sessions.
class Platform {
public:
    explicit Platform(PlatformOptions options);

    const std::filesystem::path& data_root() const { return root_; }
    ScenarioStore& store() { return store_; }
    Orchestrator& orchestrator() { return orchestrator_; }
    Analyzer& analyzer() { return analyzer_; }
    const ToolRegistry& tools() const { return tools_; }
    ToolRegistry& tools() { return tools_; }
    SessionStore& sessions() { return sessions_; }

private:
    static std::filesystem::path prepared(const std::filesystem::path& root);

    std::filesystem::path root_;
    ScenarioStore store_;
    Orchestrator orchestrator_;
    Analyzer analyzer_;
    ToolRegistry tools_;
    SessionStore sessions_;
};

std::shared_ptr<Planner> make_planner(const std::string& kind, const std::optional<LlmConfig>& llm);

} // namespace simagent
