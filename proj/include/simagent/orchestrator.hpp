#pragma once

#include "simagent/scenario.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace simagent {

struct RunRequest {
    std::string scenario_id;
    std::size_t replications = 1;
    std::uint64_t base_seed = 0;
    std::optional<std::string> label;
};

enum class RunStatus { queued, running, succeeded, failed, cancelled };

std::string_view to_string(RunStatus status);
std::optional<RunStatus> parse_run_status(std::string_view text);
bool is_terminal(RunStatus status);

struct RunRecord {
    std::string run_id;
    RunRequest request;
    RunStatus status = RunStatus::queued;
    std::vector<std::uint64_t> seeds; // replication k uses base_seed + k
    std::string fingerprint;
    std::filesystem::path output_dir;
    std::vector<std::size_t> completed_replications; // ascending
    std::uint64_t sequence = 0;                       // submission order
    std::string submitted_at;
    std::string started_at;
    std::string finished_at;
    std::string failure;
};

nlohmann::ordered_json to_json(const RunRecord& record);
RunRecord run_record_from_json(const nlohmann::json& j);

struct ProbeEvent {
    enum class Kind { replication_started, replication_finished };
    Kind kind;
    std::string run_id;
    std::size_t replication = 0;
};

struct RunFilter {
    std::optional<std::string> scenario_id;
    std::optional<RunStatus> status;
};

struct OrchestratorOptions {
    std::filesystem::path runs_root;
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
    // Invoked from worker threads around every replication, outside internal locks.
    std::function<void(const ProbeEvent&)> probe;
};

// Bounded worker pool executing (run, replication) tasks. The run registry is appended to
// <runs_root>/registry.jsonl on every state change and replayed at construction.
class Orchestrator {
public:
    Orchestrator(ScenarioStore& store, OrchestratorOptions options);
    ~Orchestrator();

    Orchestrator(const Orchestrator&) = delete;
    Orchestrator& operator=(const Orchestrator&) = delete;

    // Returns immediately with the new run id. Throws NotFoundError for unknown scenarios and
    // ValidationError when the scenario does not validate.
    std::string submit(const RunRequest& request);
    // All-or-nothing: every scenario is validated before any run is created.
    std::vector<std::string> execute_batch(const std::vector<std::string>& scenario_ids,
                                           std::size_t replications, std::uint64_t base_seed);

    RunRecord status(std::string_view run_id) const;
    RunRecord cancel(std::string_view run_id);
    std::vector<RunRecord> list_runs(const RunFilter& filter = {}) const;

    // Blocks until the run is terminal or the timeout expires; returns the latest record.
    RunRecord wait(std::string_view run_id,
                   std::chrono::milliseconds timeout = std::chrono::hours(24)) const;

    // Cancels queued work, lets in-flight replications finish, stops the workers.
    void shutdown();

    std::size_t workers() const { return options_.workers; }
    const std::filesystem::path& runs_root() const { return options_.runs_root; }
    std::filesystem::path run_directory(std::string_view run_id) const;

private:
    struct Active {
        std::shared_ptr<const ScenarioConfig> config;
        std::size_t unresolved = 0; // tasks not yet finished or skipped
        bool cancel_requested = false;
        bool failed = false;
    };
    struct Task {
        std::string run_id;
        std::size_t replication;
    };

    std::string enqueue(const RunRequest& request, std::shared_ptr<const ScenarioConfig> config);
    void finish_run(std::unique_lock<std::mutex>& lock, const std::string& run_id);
    void drop_queued(const std::string& run_id, Active& active);
    void worker_loop();
    void run_task(const Task& task);
    void resolve_task(const std::string& run_id, bool completed, std::size_t replication,
                      const std::string& failure);
    void persist(const RunRecord& record);
    void load_registry();
    RunRecord& record_ref(std::string_view run_id);
    const RunRecord& record_ref(std::string_view run_id) const;

    ScenarioStore& store_;
    OrchestratorOptions options_;

    mutable std::mutex mutex_;
    mutable std::condition_variable task_cv_;
    mutable std::condition_variable done_cv_;
    std::map<std::string, RunRecord, std::less<>> records_;
    std::map<std::string, Active, std::less<>> active_;
    std::deque<Task> queue_;
    std::uint64_t next_sequence_ = 1;
    bool stopping_ = false;

    std::mutex registry_mutex_;
    std::vector<std::thread> threads_;
};

} // namespace simagent
