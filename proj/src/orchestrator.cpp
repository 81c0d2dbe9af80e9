#include "simagent/orchestrator.hpp"

#include "simagent/engine.hpp"
#include "simagent/outputs.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace simagent {

std::string_view to_string(RunStatus status)
{
    switch (status) {
    case RunStatus::queued: return "queued";
    case RunStatus::running: return "running";
    case RunStatus::succeeded: return "succeeded";
    case RunStatus::failed: return "failed";
    case RunStatus::cancelled: return "cancelled";
    }
    return "unknown";
}

std::optional<RunStatus> parse_run_status(std::string_view text)
{
    for (auto s : {RunStatus::queued, RunStatus::running, RunStatus::succeeded, RunStatus::failed,
                   RunStatus::cancelled})
        if (text == to_string(s))
            return s;
    return std::nullopt;
}

bool is_terminal(RunStatus status)
{
    return status == RunStatus::succeeded || status == RunStatus::failed ||
           status == RunStatus::cancelled;
}

ordered_json to_json(const RunRecord& r)
{
    ordered_json j;
    j["run_id"] = r.run_id;
    j["scenario_id"] = r.request.scenario_id;
    j["replications"] = r.request.replications;
    j["base_seed"] = r.request.base_seed;
    j["label"] = r.request.label ? ordered_json(*r.request.label) : ordered_json(nullptr);
    j["status"] = std::string(to_string(r.status));
    j["seeds"] = r.seeds;
    j["fingerprint"] = r.fingerprint;
    j["output_dir"] = r.output_dir.string();
    j["completed_replications"] = r.completed_replications;
    j["sequence"] = r.sequence;
    j["submitted_at"] = r.submitted_at;
    j["started_at"] = r.started_at;
    j["finished_at"] = r.finished_at;
    j["failure"] = r.failure;
    return j;
}

RunRecord run_record_from_json(const json& j)
{
    RunRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.request.scenario_id = j.at("scenario_id").get<std::string>();
    r.request.replications = j.at("replications").get<std::size_t>();
    r.request.base_seed = j.at("base_seed").get<std::uint64_t>();
    if (!j.at("label").is_null())
        r.request.label = j["label"].get<std::string>();
    auto status = parse_run_status(j.at("status").get<std::string>());
    if (!status)
        throw IoError("run " + r.run_id + ": unknown status");
    r.status = *status;
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.output_dir = j.at("output_dir").get<std::string>();
    r.completed_replications = j.at("completed_replications").get<std::vector<std::size_t>>();
    r.sequence = j.at("sequence").get<std::uint64_t>();
    r.submitted_at = j.at("submitted_at").get<std::string>();
    r.started_at = j.at("started_at").get<std::string>();
    r.finished_at = j.at("finished_at").get<std::string>();
    r.failure = j.at("failure").get<std::string>();
    return r;
}

namespace {

std::string utc_now()
{
    auto now = std::chrono::system_clock::now();
    auto secs = std::chrono::system_clock::to_time_t(now);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

std::string run_id_for(std::uint64_t sequence)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "run-%06llu", static_cast<unsigned long long>(sequence));
    return buf;
}

} // namespace

Orchestrator::Orchestrator(ScenarioStore& store, OrchestratorOptions options)
    : store_(store), options_(std::move(options))
{
    if (options_.workers == 0)
        throw UsageError("worker pool size must be at least 1");
    fs::create_directories(options_.runs_root);
    load_registry();
    threads_.reserve(options_.workers);
    for (std::size_t i = 0; i < options_.workers; ++i)
        threads_.emplace_back([this] { worker_loop(); });
}

Orchestrator::~Orchestrator()
{
    shutdown();
}

fs::path Orchestrator::run_directory(std::string_view run_id) const
{
    return options_.runs_root / std::string(run_id);
}

void Orchestrator::load_registry()
{
    std::ifstream in(options_.runs_root / "registry.jsonl");
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        try {
            RunRecord r = run_record_from_json(json::parse(line));
            next_sequence_ = std::max(next_sequence_, r.sequence + 1);
            records_[r.run_id] = std::move(r);
        } catch (const std::exception&) {
            // A torn final line from an interrupted append is skipped.
        }
    }
    for (auto& [id, r] : records_) {
        if (is_terminal(r.status))
            continue;
        r.status = RunStatus::cancelled;
        r.failure = "interrupted: the service stopped before the run completed";
        r.finished_at = utc_now();
        persist(r);
    }
}

void Orchestrator::persist(const RunRecord& record)
{
    std::lock_guard guard(registry_mutex_);
    std::ofstream out(options_.runs_root / "registry.jsonl", std::ios::app | std::ios::binary);
    if (!out)
        throw IoError("cannot append to " + (options_.runs_root / "registry.jsonl").string());
    out << to_json(record).dump() << '\n';
}

RunRecord& Orchestrator::record_ref(std::string_view run_id)
{
    auto it = records_.find(run_id);
    if (it == records_.end())
        throw NotFoundError("unknown run '" + std::string(run_id) + "'");
    return it->second;
}

const RunRecord& Orchestrator::record_ref(std::string_view run_id) const
{
    auto it = records_.find(run_id);
    if (it == records_.end())
        throw NotFoundError("unknown run '" + std::string(run_id) + "'");
    return it->second;
}

std::string Orchestrator::enqueue(const RunRequest& request,
                                  std::shared_ptr<const ScenarioConfig> config)
{
    std::unique_lock lock(mutex_);
    if (stopping_) {
        lock.unlock();
        store_.unpin(request.scenario_id);
        throw Error("orchestrator is shutting down");
    }
    RunRecord r;
    r.sequence = next_sequence_++;
    r.run_id = run_id_for(r.sequence);
    r.request = request;
    for (std::size_t k = 0; k < request.replications; ++k)
        r.seeds.push_back(request.base_seed + k);
    r.fingerprint = fingerprint(*config);
    r.output_dir = run_directory(r.run_id);
    r.submitted_at = utc_now();

    Active active;
    active.config = std::move(config);
    active.unresolved = request.replications;
    for (std::size_t k = 0; k < request.replications; ++k)
        queue_.push_back({r.run_id, k});
    active_.emplace(r.run_id, std::move(active));
    persist(r);
    auto id = r.run_id;
    records_.emplace(id, std::move(r));
    lock.unlock();
    task_cv_.notify_all();
    return id;
}

std::string Orchestrator::submit(const RunRequest& request)
{
    if (request.replications < 1)
        throw UsageError("replications must be at least 1");
    auto config = std::make_shared<ScenarioConfig>(store_.load_and_pin(request.scenario_id));
    ValidationReport report = validate(*config);
    if (!report.ok) {
        store_.unpin(request.scenario_id);
        throw ValidationError("scenario '" + request.scenario_id + "' does not validate:\n" +
                                  report.to_text(),
                              report);
    }
    return enqueue(request, std::move(config));
}

std::vector<std::string> Orchestrator::execute_batch(const std::vector<std::string>& scenario_ids,
                                                     std::size_t replications,
                                                     std::uint64_t base_seed)
{
    if (replications < 1)
        throw UsageError("replications must be at least 1");
    std::vector<std::shared_ptr<const ScenarioConfig>> configs;
    auto release = [&] {
        for (std::size_t i = 0; i < configs.size(); ++i)
            store_.unpin(scenario_ids[i]);
    };
    try {
        for (const auto& id : scenario_ids) {
            auto config = std::make_shared<ScenarioConfig>(store_.load_and_pin(id));
            configs.push_back(config);
            ValidationReport report = validate(*config);
            if (!report.ok)
                throw ValidationError("batch rejected: scenario '" + id + "' does not validate:\n" +
                                          report.to_text(),
                                      report);
        }
    } catch (...) {
        release();
        throw;
    }
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < scenario_ids.size(); ++i)
        ids.push_back(enqueue({scenario_ids[i], replications, base_seed, std::nullopt}, configs[i]));
    return ids;
}

RunRecord Orchestrator::status(std::string_view run_id) const
{
    std::lock_guard lock(mutex_);
    return record_ref(run_id);
}

void Orchestrator::drop_queued(const std::string& run_id, Active& active)
{
    auto before = queue_.size();
    queue_.erase(std::remove_if(queue_.begin(), queue_.end(),
                                [&](const Task& t) { return t.run_id == run_id; }),
                 queue_.end());
    active.unresolved -= before - queue_.size();
}

RunRecord Orchestrator::cancel(std::string_view run_id)
{
    std::unique_lock lock(mutex_);
    RunRecord& r = record_ref(run_id);
    if (is_terminal(r.status))
        return r;
    const std::string id = r.run_id;
    auto it = active_.find(id);
    if (it == active_.end()) // all replications resolved; summary being written
        return r;
    Active& active = it->second;
    active.cancel_requested = true;
    drop_queued(id, active);
    if (active.unresolved == 0)
        finish_run(lock, id);
    return record_ref(id);
}

std::vector<RunRecord> Orchestrator::list_runs(const RunFilter& filter) const
{
    std::lock_guard lock(mutex_);
    std::vector<RunRecord> out;
    for (const auto& [id, r] : records_) {
        if (filter.scenario_id && r.request.scenario_id != *filter.scenario_id)
            continue;
        if (filter.status && r.status != *filter.status)
            continue;
        out.push_back(r);
    }
    std::sort(out.begin(), out.end(),
              [](const RunRecord& a, const RunRecord& b) { return a.sequence > b.sequence; });
    return out;
}

RunRecord Orchestrator::wait(std::string_view run_id, std::chrono::milliseconds timeout) const
{
    std::unique_lock lock(mutex_);
    record_ref(run_id);
    done_cv_.wait_for(lock, timeout, [&] { return is_terminal(record_ref(run_id).status); });
    return record_ref(run_id);
}

void Orchestrator::shutdown()
{
    {
        std::unique_lock lock(mutex_);
        if (stopping_ && threads_.empty())
            return;
        stopping_ = true;
        std::vector<std::string> ids;
        for (const auto& [id, a] : active_)
            ids.push_back(id);
        for (const auto& id : ids) {
            auto it = active_.find(id);
            if (it == active_.end())
                continue;
            it->second.cancel_requested = true;
            drop_queued(id, it->second);
            if (it->second.unresolved == 0)
                finish_run(lock, id);
        }
    }
    task_cv_.notify_all();
    for (auto& t : threads_)
        if (t.joinable())
            t.join();
    threads_.clear();
}

void Orchestrator::worker_loop()
{
    while (true) {
        Task task;
        {
            std::unique_lock lock(mutex_);
            task_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
            if (queue_.empty())
                return;
            task = queue_.front();
            queue_.pop_front();
            Active& active = active_.at(task.run_id);
            if (active.cancel_requested || active.failed) {
                lock.unlock();
                resolve_task(task.run_id, false, task.replication, {});
                continue;
            }
            RunRecord& r = record_ref(task.run_id);
            if (r.status == RunStatus::queued) {
                r.status = RunStatus::running;
                r.started_at = utc_now();
                persist(r);
            }
        }
        run_task(task);
    }
}

void Orchestrator::run_task(const Task& task)
{
    std::shared_ptr<const ScenarioConfig> config;
    std::uint64_t seed = 0;
    fs::path dir;
    {
        std::lock_guard lock(mutex_);
        config = active_.at(task.run_id).config;
        const RunRecord& r = record_ref(task.run_id);
        seed = r.seeds.at(task.replication);
        dir = r.output_dir / ("rep_" + std::to_string(task.replication));
    }
    if (options_.probe)
        options_.probe({ProbeEvent::Kind::replication_started, task.run_id, task.replication});
    std::string failure;
    try {
        write_outputs(run_simulation(*config, seed), dir);
    } catch (const std::exception& e) {
        failure = "replication " + std::to_string(task.replication) + ": " + e.what();
    }
    if (options_.probe)
        options_.probe({ProbeEvent::Kind::replication_finished, task.run_id, task.replication});
    resolve_task(task.run_id, failure.empty(), task.replication, failure);
}

void Orchestrator::resolve_task(const std::string& run_id, bool completed, std::size_t replication,
                                const std::string& failure)
{
    std::unique_lock lock(mutex_);
    Active& active = active_.at(run_id);
    RunRecord& r = record_ref(run_id);
    if (completed) {
        auto& done = r.completed_replications;
        done.insert(std::upper_bound(done.begin(), done.end(), replication), replication);
    }
    if (!failure.empty() && !active.failed) {
        active.failed = true;
        r.failure = failure;
    }
    if (--active.unresolved == 0)
        finish_run(lock, run_id);
}

void Orchestrator::finish_run(std::unique_lock<std::mutex>& lock, const std::string& run_id)
{
    Active active = std::move(active_.at(run_id));
    active_.erase(run_id);
    RunRecord snapshot = record_ref(run_id);

    std::string failure;
    if (!active.failed && !snapshot.completed_replications.empty()) {
        lock.unlock();
        try {
            std::vector<ReplicationData> reps;
            for (auto k : snapshot.completed_replications)
                reps.push_back(read_replication(snapshot.output_dir / ("rep_" + std::to_string(k))));
            KpiSummary summary = summarize(run_id, snapshot.request.scenario_id, reps);
            std::ofstream out(snapshot.output_dir / "kpi_summary.json", std::ios::binary | std::ios::trunc);
            out << render_kpi_summary(summary);
            if (!out)
                throw IoError("cannot write " + (snapshot.output_dir / "kpi_summary.json").string());
        } catch (const std::exception& e) {
            failure = std::string("kpi summary: ") + e.what();
        }
        lock.lock();
    }

    RunRecord& r = record_ref(run_id);
    if (active.failed || !failure.empty()) {
        r.status = RunStatus::failed;
        if (r.failure.empty())
            r.failure = failure;
    } else if (active.cancel_requested && r.completed_replications.size() < r.request.replications) {
        r.status = RunStatus::cancelled;
    } else {
        r.status = RunStatus::succeeded;
    }
    r.finished_at = utc_now();
    persist(r);
    store_.unpin(r.request.scenario_id);
    done_cv_.notify_all();
}

} // namespace simagent
