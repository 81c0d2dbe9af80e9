#include "support/support.hpp"

#include "simagent/orchestrator.hpp"
#include "simagent/outputs.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <future>

using namespace simagent;
using testsupport::TempDir;
using testsupport::slurp;

namespace {

struct Fixture {
    TempDir dir;
    ScenarioStore store{dir / "scenarios"};
    std::unique_ptr<Orchestrator> orch;

    explicit Fixture(std::size_t workers = 2, std::function<void(const ProbeEvent&)> probe = {})
    {
        store.create(testsupport::small_config("alpha"));
        orch = std::make_unique<Orchestrator>(store, OrchestratorOptions{dir / "runs", workers, std::move(probe)});
    }
};

// Holds replications at their start until opened.
struct Gate {
    std::promise<void> promise;
    std::shared_future<void> future = promise.get_future().share();
    bool opened = false;
    void open()
    {
        if (!std::exchange(opened, true))
            promise.set_value();
    }
    std::function<void(const ProbeEvent&)> probe()
    {
        return [f = future](const ProbeEvent& e) {
            if (e.kind == ProbeEvent::Kind::replication_started)
                f.wait();
        };
    }
};

std::vector<std::string> rep_files(const RunRecord& r, std::size_t k)
{
    auto d = r.output_dir / ("rep_" + std::to_string(k));
    return {slurp(d / "adoption.csv"), slurp(d / "revenue.csv")};
}

} // namespace

TEST(Orchestrator, SubmitRunsToCompletion)
{
    Fixture f;
    auto id = f.orch->submit({"alpha", 3, 100, "first"});
    auto r = f.orch->wait(id);
    EXPECT_EQ(r.status, RunStatus::succeeded) << r.failure;
    EXPECT_EQ(r.seeds, (std::vector<std::uint64_t>{100, 101, 102}));
    EXPECT_EQ(r.completed_replications, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_EQ(r.fingerprint, fingerprint(f.store.load("alpha")));
    EXPECT_TRUE(std::filesystem::exists(r.output_dir / "kpi_summary.json"));
    EXPECT_TRUE(testsupport::check_kpi_summary(r.output_dir).empty());
    for (std::size_t k = 0; k < 3; ++k) {
        auto meta = nlohmann::json::parse(slurp(r.output_dir / ("rep_" + std::to_string(k)) / "run_meta.json"));
        EXPECT_EQ(meta["seed"].get<std::uint64_t>(), 100 + k);
    }
    EXPECT_FALSE(f.store.pinned("alpha"));
}

TEST(Orchestrator, UnknownAndInvalidScenariosAreRejectedUpFront)
{
    Fixture f;
    EXPECT_THROW(f.orch->submit({"nope", 1, 0, {}}), NotFoundError);
    f.store.apply_patch("alpha", InputPatch{InputFile::global_params, InputPatch::Op::set, "", "beta_price", 1.0});
    auto raw = f.store.load("alpha");
    raw.globals.choice_function = 4;
    raw.scenario_id = "broken";
    write_scenario(raw, f.store.directory("broken"));
    try {
        f.orch->submit({"broken", 1, 0, {}});
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_FALSE(e.report().ok);
        EXPECT_NE(e.report().to_text().find("{1,2,3}"), std::string::npos);
    }
    EXPECT_THROW(f.orch->submit({"alpha", 0, 0, {}}), UsageError);
    EXPECT_TRUE(f.orch->list_runs().empty());
}

TEST(Orchestrator, SameSeedIsByteIdentical)
{
    Fixture f;
    auto a = f.orch->wait(f.orch->submit({"alpha", 2, 7, {}}));
    auto b = f.orch->wait(f.orch->submit({"alpha", 2, 7, {}}));
    for (std::size_t k = 0; k < 2; ++k)
        EXPECT_EQ(rep_files(a, k), rep_files(b, k));
    auto sa = nlohmann::json::parse(slurp(a.output_dir / "kpi_summary.json"));
    auto sb = nlohmann::json::parse(slurp(b.output_dir / "kpi_summary.json"));
    EXPECT_EQ(sa["per_replication"], sb["per_replication"]);
}

TEST(Orchestrator, ConcurrencyDoesNotChangeOutputsAndIsBounded)
{
    std::atomic<int> live{0}, peak{0};
    auto probe = [&](const ProbeEvent& e) {
        if (e.kind == ProbeEvent::Kind::replication_started) {
            int now = ++live;
            int p = peak.load();
            while (now > p && !peak.compare_exchange_weak(p, now)) {
            }
        } else {
            --live;
        }
    };
    Fixture serial(1);
    Fixture parallel(3, probe);
    for (auto* f : {&serial, &parallel}) {
        f->store.create(testsupport::small_config("beta", 30, 48));
        f->store.create(testsupport::small_config("gamma", 15, 36));
    }
    auto s_ids = serial.orch->execute_batch({"alpha", "beta", "gamma"}, 4, 11);
    auto p_ids = parallel.orch->execute_batch({"alpha", "beta", "gamma"}, 4, 11);
    ASSERT_EQ(s_ids.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        auto a = serial.orch->wait(s_ids[i]);
        auto b = parallel.orch->wait(p_ids[i]);
        ASSERT_EQ(a.status, RunStatus::succeeded);
        ASSERT_EQ(b.status, RunStatus::succeeded);
        for (std::size_t k = 0; k < 4; ++k)
            EXPECT_EQ(rep_files(a, k), rep_files(b, k)) << i << "/" << k;
    }
    EXPECT_LE(peak.load(), 3);
    EXPECT_GE(peak.load(), 1);
}

TEST(Orchestrator, BatchIsAllOrNothing)
{
    Fixture f;
    EXPECT_THROW(f.orch->execute_batch({"alpha", "missing"}, 2, 1), NotFoundError);
    EXPECT_TRUE(f.orch->list_runs().empty());
}

TEST(Orchestrator, CancelQueuedRun)
{
    Gate gate;
    Fixture f(1, gate.probe());
    auto first = f.orch->submit({"alpha", 1, 1, {}});
    auto second = f.orch->submit({"alpha", 5, 1, {}});
    auto r = f.orch->cancel(second);
    EXPECT_EQ(r.status, RunStatus::cancelled);
    EXPECT_TRUE(r.completed_replications.empty());
    gate.open();
    EXPECT_EQ(f.orch->wait(first).status, RunStatus::succeeded);
    EXPECT_EQ(f.orch->wait(second).status, RunStatus::cancelled);
    // cancelling a terminal run is a no-op
    EXPECT_EQ(f.orch->cancel(first).status, RunStatus::succeeded);
    EXPECT_THROW(f.orch->cancel("run-999"), NotFoundError);
}

TEST(Orchestrator, ScenarioIsPinnedWhileRunIsActive)
{
    Gate gate;
    Fixture f(1, gate.probe());
    auto id = f.orch->submit({"alpha", 1, 1, {}});
    EXPECT_TRUE(f.store.pinned("alpha"));
    EXPECT_THROW(f.store.apply_patch("alpha", {InputFile::global_params, InputPatch::Op::set, "", "beta_price", 2.0}),
                 ConflictError);
    gate.open();
    f.orch->wait(id);
    EXPECT_FALSE(f.store.pinned("alpha"));
}

TEST(Orchestrator, RegistrySurvivesRestart)
{
    TempDir dir;
    ScenarioStore store(dir / "scenarios");
    store.create(testsupport::small_config("alpha"));
    std::string id;
    {
        Orchestrator orch(store, {dir / "runs", 2, {}});
        id = orch.wait(orch.submit({"alpha", 2, 3, "keep"})).run_id;
    }
    Orchestrator again(store, {dir / "runs", 2, {}});
    auto r = again.status(id);
    EXPECT_EQ(r.status, RunStatus::succeeded);
    EXPECT_EQ(r.request.label, std::optional<std::string>("keep"));
    auto next = again.submit({"alpha", 1, 3, {}});
    EXPECT_NE(next, id);
    EXPECT_EQ(again.wait(next).status, RunStatus::succeeded);
    EXPECT_EQ(again.list_runs().size(), 2u);
    EXPECT_EQ(again.list_runs({std::string("alpha"), RunStatus::succeeded}).size(), 2u);
    EXPECT_TRUE(again.list_runs({std::string("other"), std::nullopt}).empty());
}

TEST(Orchestrator, ShutdownCancelsQueuedWork)
{
    Gate gate;
    Fixture f(1, gate.probe());
    auto first = f.orch->submit({"alpha", 1, 1, {}});
    auto queued = f.orch->submit({"alpha", 3, 1, {}});
    while (f.orch->status(first).status != RunStatus::running)
        std::this_thread::sleep_for(std::chrono::milliseconds(1));
    std::thread releaser([&] {
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
        gate.open();
    });
    f.orch->shutdown();
    releaser.join();
    // the in-flight replication finishes, and with it the run
    auto r = f.orch->status(first);
    EXPECT_EQ(r.status, RunStatus::succeeded);
    EXPECT_EQ(r.completed_replications, std::vector<std::size_t>{0});
    EXPECT_EQ(f.orch->status(queued).status, RunStatus::cancelled);
    EXPECT_TRUE(f.orch->status(queued).completed_replications.empty());
    EXPECT_THROW(f.orch->submit({"alpha", 1, 1, {}}), Error);
}
