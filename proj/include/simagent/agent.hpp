#pragma once

#include "simagent/tools.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace simagent {

// --- charts ----------------------------------------------------------------

struct ChartSeries {
    std::string label;
    std::vector<nlohmann::ordered_json> x; // numbers, or parameter names for tornado bars
    std::vector<double> y;
};

struct ChartSpec {
    std::string chart_type; // line | bar | tornado
    std::string title;
    std::string x_label;
    std::string x_unit;
    std::string y_label;
    std::string y_unit;
    std::vector<ChartSeries> series;
};

nlohmann::ordered_json to_json(const ChartSpec& chart);
// Throws UsageError describing the first problem.
ChartSpec chart_from_json(const nlohmann::json& j);
const std::vector<ParamSpec>& chart_params();

// --- turns -----------------------------------------------------------------

struct ToolCall {
    std::string id;
    std::string tool;
    nlohmann::json arguments;
    nlohmann::ordered_json result; // tool output, or {"error": ...}
    bool ok = false;
    double duration_ms = 0.0;
};

nlohmann::ordered_json to_json(const ToolCall& call);

struct AgentTurn {
    std::string user_message;
    std::vector<ToolCall> calls;
    std::string response;
    std::vector<ChartSpec> charts;
    std::string planner;
    std::size_t iterations = 0; // tool calls executed
    bool error = false;
};

nlohmann::ordered_json to_json(const AgentTurn& turn);

// --- memory ----------------------------------------------------------------

struct HistoryEntry {
    std::string role; // user | agent | tool
    std::string content;
    nlohmann::ordered_json data; // tool entries: the ToolCall; agent entries: charts
};

struct Binding {
    std::string kind; // scenario | run
    std::string name; // scenario name, or run id
    std::string id;
    std::string scenario_id; // runs only
};

struct SessionMemory {
    std::string session_id;
    std::string created_at;
    std::vector<HistoryEntry> history;
    std::vector<Binding> bindings; // oldest first; resolution walks newest-first
    std::string system_context;

    std::optional<std::string> resolve_scenario(std::string_view name) const;
    std::optional<std::string> latest_run(std::optional<std::string_view> scenario_id = {}) const;
};

nlohmann::ordered_json to_json(const SessionMemory& session);
SessionMemory session_from_json(const nlohmann::json& j);

// Field docs, KPI definitions and the model mechanics, handed to planners as context.
std::string build_system_context();

// Sessions persisted under <root>/<id>/{session.json,transcript.jsonl}.
class SessionStore {
public:
    explicit SessionStore(std::filesystem::path root);

    std::string create();
    bool exists(std::string_view session_id) const;
    SessionMemory snapshot(std::string_view session_id) const;

    // Serializes turns per session. `waited` reports whether another turn was in progress.
    class Lease {
    public:
        SessionMemory& memory() { return *memory_; }
        bool waited() const { return waited_; }

    private:
        friend class SessionStore;
        std::unique_lock<std::mutex> lock_;
        SessionMemory* memory_ = nullptr;
        bool waited_ = false;
    };
    Lease acquire(std::string_view session_id, const std::function<void()>& on_wait = {});

    // Rewrites session.json and appends the turn to transcript.jsonl.
    void commit(const SessionMemory& memory, const AgentTurn& turn);

private:
    struct Slot {
        std::mutex turn_mutex;
        SessionMemory memory;
    };
    Slot& slot(std::string_view session_id) const;

    std::filesystem::path root_;
    mutable std::mutex mutex_;
    mutable std::map<std::string, std::unique_ptr<Slot>, std::less<>> slots_;
    std::uint64_t next_ = 1;
};

// --- planners --------------------------------------------------------------

struct PlannedCall {
    std::string id;
    std::string tool;
    nlohmann::json arguments;
};

struct PlannerAction {
    std::vector<PlannedCall> calls; // empty = final answer
    std::string text;
    std::vector<ChartSpec> charts;
};

struct PlanContext {
    const SessionMemory& session;
    const std::string& user_message;
    const std::vector<ToolCall>& calls; // executed so far this turn
    const ToolRegistry& tools;
};

class Planner {
public:
    virtual ~Planner() = default;
    virtual std::string name() const = 0;
    // Throws PlannerError on transport or protocol failure.
    virtual PlannerAction plan(const PlanContext& context) = 0;
};

// Deterministic grammar-driven planner. Never guesses: unparseable input yields the help text.
class ScriptedPlanner : public Planner {
public:
    std::string name() const override { return "scripted"; }
    PlannerAction plan(const PlanContext& context) override;

    static const std::string& help_text();
};

struct LlmConfig {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string model = "gpt-4o-mini";
    std::string api_key_env = "SIMAGENT_LLM_API_KEY";
    int timeout_seconds = 120;
};

LlmConfig load_llm_config(const std::filesystem::path& path);

// Chat-completions planner. Emits one request per plan() call, plus one retry when the model's
// tool arguments fail their schema.
class LlmPlanner : public Planner {
public:
    explicit LlmPlanner(LlmConfig config);
    std::string name() const override { return "llm"; }
    PlannerAction plan(const PlanContext& context) override;

    // Request body for the given context (exposed for wire tests).
    nlohmann::ordered_json request_body(const PlanContext& context) const;

private:
    nlohmann::json post(const nlohmann::ordered_json& body) const;

    LlmConfig config_;
};

// --- agent loop ------------------------------------------------------------

struct ApiEvent {
    std::string type; // text | tool_call | tool_result | chart | error | done
    nlohmann::ordered_json payload;
};

using EventSink = std::function<void(const ApiEvent&)>;

struct AgentOptions {
    std::size_t max_tool_calls = 8;
};

class Agent {
public:
    Agent(const ToolRegistry& tools, SessionStore& sessions, std::shared_ptr<Planner> planner,
          AgentOptions options = {});

    AgentTurn handle_turn(std::string_view session_id, const std::string& user_message,
                          const EventSink& sink = {});

    const Planner& planner() const { return *planner_; }

private:
    const ToolRegistry& tools_;
    SessionStore& sessions_;
    std::shared_ptr<Planner> planner_;
    AgentOptions options_;
};

} // namespace simagent
