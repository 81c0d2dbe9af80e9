#pragma once

// Shared by the unit tests and the acceptance runner. Nothing here calls into the engine or
// the KPI code it checks: the oracles below are written from the model rules directly.

#include "simagent/scenario.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace testsupport {

class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& sub) const { return path_ / sub; }

private:
    std::filesystem::path path_;
};

std::string slurp(const std::filesystem::path& path);

// Two agents (savviness 3 and 8), two products, three hours, argmax, activation 1.
simagent::ScenarioConfig tiny_config();

// A small valid scenario for store/orchestrator tests.
simagent::ScenarioConfig small_config(const std::string& id, std::size_t agents = 20,
                                      std::int64_t horizon = 24);

// --- brute-force trajectory oracle ------------------------------------------

struct OracleHour {
    std::int64_t hour;
    std::vector<std::int64_t> new_adopters;
    std::vector<std::int64_t> cumulative;
    std::vector<double> share;
    std::vector<double> revenue;
};

// Straight-line re-statement of the hourly rules for activation_prob = 1 and argmax choice.
// No randomness is involved, so no generator is needed.
std::vector<OracleHour> argmax_oracle(const simagent::ScenarioConfig& config);

// --- independent KPI checker --------------------------------------------------

// Recomputes every number in <run_dir>/kpi_summary.json from the CSVs next to it and returns
// one message per disagreement (empty = exact agreement).
std::vector<std::string> check_kpi_summary(const std::filesystem::path& run_dir);

// --- stub chat-completions endpoint -------------------------------------------

class StubLlm {
public:
    StubLlm();
    ~StubLlm();

    // Queues the next assistant message ({"content": ...} or {"tool_calls": [...]}).
    void push_message(nlohmann::json message);
    void push_tool_call(const std::string& name, const std::string& arguments_text,
                        const std::string& id = "call_stub");
    void push_text(const std::string& text);

    std::string base_url() const;
    std::vector<nlohmann::json> requests() const;
    std::vector<std::string> auth_headers() const;

private:
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
    mutable std::mutex mutex_;
    std::deque<nlohmann::json> replies_;
    std::vector<nlohmann::json> requests_;
    std::vector<std::string> auth_;
};

} // namespace testsupport
