#include "support/support.hpp"

#include "simagent/platform.hpp"

#include <gtest/gtest.h>

#include <regex>

using namespace simagent;
using nlohmann::json;
using testsupport::TempDir;

namespace {

struct World {
    TempDir dir;
    Platform platform{{dir.path(), 4, {}}};

    World() { platform.store().create(make_baseline({40, 48, 1})); }

    Agent agent(std::shared_ptr<Planner> planner = std::make_shared<ScriptedPlanner>(), std::size_t max_calls = 8)
    {
        return Agent(platform.tools(), platform.sessions(), std::move(planner), {max_calls});
    }
};

std::vector<std::string> tools_of(const AgentTurn& t)
{
    std::vector<std::string> out;
    for (const auto& c : t.calls)
        out.push_back(c.tool);
    return out;
}

// Asks for list_scenarios forever.
class Insistent : public Planner {
public:
    std::string name() const override { return "insistent"; }
    PlannerAction plan(const PlanContext& ctx) override
    {
        ++requests;
        PlannerAction a;
        a.calls.push_back({"c" + std::to_string(ctx.calls.size()), "list_scenarios", json::object()});
        return a;
    }
    int requests = 0;
};

class Broken : public Planner {
public:
    std::string name() const override { return "broken"; }
    PlannerAction plan(const PlanContext&) override { throw PlannerError("endpoint unreachable"); }
};

} // namespace

TEST(ScriptedGrammar, DocumentedMappings)
{
    World w;
    auto agent = w.agent();
    auto sid = w.platform.sessions().create();

    auto t1 = agent.handle_turn(sid, "run baseline with 2 replications");
    ASSERT_EQ(tools_of(t1), std::vector<std::string>{"run_simulation"});
    EXPECT_EQ(t1.calls[0].arguments, (json{{"scenario_id", "baseline"}, {"replications", 2}, {"base_seed", 42}}));
    EXPECT_NE(t1.response.find(t1.calls[0].result["run"]["run_id"].get<std::string>()), std::string::npos);

    auto t2 = agent.handle_turn(sid, "create scenario cheaper from baseline set products.price[P1] = 4.5");
    ASSERT_EQ(tools_of(t2), std::vector<std::string>{"modify_inputs"});
    const auto& patch = t2.calls[0].arguments["patches"][0];
    EXPECT_EQ(patch["file"], "products");
    EXPECT_EQ(patch["row"], "P1");
    EXPECT_EQ(patch["field"], "price");
    EXPECT_EQ(patch["value"], 4.5);

    auto t3 = agent.handle_turn(sid, "run cheaper");
    auto t4 = agent.handle_turn(sid, "compare baseline and cheaper on total_revenue");
    ASSERT_EQ(tools_of(t4), std::vector<std::string>{"compare_runs"});
    EXPECT_EQ(t4.calls[0].arguments["run_a"].dump(), t1.calls[0].result["run"]["run_id"].dump());
    EXPECT_EQ(t4.calls[0].arguments["run_b"].dump(), t3.calls[0].result["run"]["run_id"].dump());
    EXPECT_EQ(t4.calls[0].arguments["kpi"], "total_revenue");

    auto t5 = agent.handle_turn(sid, "show revenue for the last run as chart");
    ASSERT_EQ(tools_of(t5), std::vector<std::string>{"query_series"});
    ASSERT_EQ(t5.charts.size(), 1u);
    EXPECT_EQ(t5.charts[0].chart_type, "line");
    EXPECT_EQ(t5.charts[0].x_label, "hour");

    auto t6 = agent.handle_turn(sid, "what does digital_savviness mean?");
    ASSERT_EQ(tools_of(t6), std::vector<std::string>{"describe_field"});
    EXPECT_NE(t6.response.find("savviness"), std::string::npos);

    EXPECT_EQ(tools_of(agent.handle_turn(sid, "list scenarios")), std::vector<std::string>{"list_scenarios"});
    EXPECT_EQ(tools_of(agent.handle_turn(sid, "list runs")), std::vector<std::string>{"list_runs"});
}

TEST(ScriptedGrammar, DriverQuestionProducesTornado)
{
    World w;
    auto agent = w.agent();
    auto sid = w.platform.sessions().create();
    auto t = agent.handle_turn(sid, "what drove total revenue in baseline");
    ASSERT_EQ(tools_of(t), std::vector<std::string>{"rank_drivers"});
    EXPECT_EQ(t.calls[0].arguments["kpi"], "total_revenue");
    ASSERT_EQ(t.charts.size(), 1u);
    EXPECT_EQ(t.charts[0].chart_type, "tornado");
    EXPECT_FALSE(t.charts[0].series[0].x.empty());
}

TEST(ScriptedGrammar, UnknownInputGetsHelpAndNoToolCall)
{
    World w;
    auto agent = w.agent();
    auto sid = w.platform.sessions().create();
    for (auto msg : {"please make it rain", "run", "show profit for baseline", "compare x"}) {
        auto t = agent.handle_turn(sid, msg);
        EXPECT_TRUE(t.calls.empty()) << msg;
        EXPECT_EQ(t.response, ScriptedPlanner::help_text()) << msg;
    }
    auto t = agent.handle_turn(sid, "compare baseline and baseline");
    EXPECT_TRUE(t.calls.empty());
    EXPECT_NE(t.response.find("No run of scenario"), std::string::npos);
}

TEST(Agent, ToolCallBoundIsEnforced)
{
    World w;
    auto planner = std::make_shared<Insistent>();
    auto agent = w.agent(planner, 8);
    auto sid = w.platform.sessions().create();
    std::vector<std::string> events;
    auto t = agent.handle_turn(sid, "loop", [&](const ApiEvent& e) { events.push_back(e.type); });
    EXPECT_EQ(t.calls.size(), 8u);
    EXPECT_EQ(planner->requests, 8);
    EXPECT_FALSE(t.error);
    EXPECT_NE(t.response.find("8 tool calls"), std::string::npos);
    EXPECT_EQ(std::count(events.begin(), events.end(), "tool_call"), 8);
    EXPECT_EQ(events.back(), "done");
}

TEST(Agent, EventOrder)
{
    World w;
    auto agent = w.agent();
    auto sid = w.platform.sessions().create();
    agent.handle_turn(sid, "run baseline");
    std::vector<std::string> events;
    agent.handle_turn(sid, "show market share for baseline as a chart",
                      [&](const ApiEvent& e) { events.push_back(e.type); });
    EXPECT_EQ(events, (std::vector<std::string>{"tool_call", "tool_result", "chart", "text", "done"}));
}

TEST(Agent, PlannerFailureKeepsMemoryClean)
{
    World w;
    auto good = w.agent();
    auto sid = w.platform.sessions().create();
    good.handle_turn(sid, "run baseline");
    auto before = w.platform.sessions().snapshot(sid);

    auto bad = w.agent(std::make_shared<Broken>());
    std::vector<ApiEvent> events;
    auto t = bad.handle_turn(sid, "run baseline", [&](const ApiEvent& e) { events.push_back(e); });
    EXPECT_TRUE(t.error);
    ASSERT_GE(events.size(), 2u);
    EXPECT_EQ(events[events.size() - 2].type, "error");
    EXPECT_NE(events[events.size() - 2].payload.dump().find("unreachable"), std::string::npos);
    EXPECT_EQ(events.back().type, "done");

    auto after = w.platform.sessions().snapshot(sid);
    EXPECT_EQ(after.bindings.size(), before.bindings.size());
    ASSERT_EQ(after.history.size(), before.history.size() + 2);
    EXPECT_EQ(after.history[after.history.size() - 2].role, "user");
}

TEST(Agent, ToolErrorsAreReportedNotThrown)
{
    World w;
    auto agent = w.agent();
    auto sid = w.platform.sessions().create();
    auto t = agent.handle_turn(sid, "create scenario bad from baseline set population.digital_savviness[1] = 11");
    ASSERT_EQ(t.calls.size(), 1u);
    EXPECT_FALSE(t.calls[0].ok);
    EXPECT_TRUE(t.calls[0].result.contains("report"));
    EXPECT_NE(t.response.find("1..10"), std::string::npos);
    EXPECT_FALSE(w.platform.store().exists("bad"));

    auto t2 = agent.handle_turn(sid, "run nowhere");
    EXPECT_FALSE(t2.calls[0].ok);
    EXPECT_NE(t2.response.find("run_simulation failed"), std::string::npos);
}

TEST(Agent, SameTranscriptSameAnswers)
{
    const std::vector<std::string> script{"run baseline", "create scenario dear from baseline set products.price[P2] = 12",
                                          "run dear", "compare baseline and dear"};
    std::vector<std::string> first, second;
    for (auto* out : {&first, &second}) {
        World w;
        auto agent = w.agent();
        auto sid = w.platform.sessions().create();
        for (const auto& m : script)
            out->push_back(agent.handle_turn(sid, m).response);
    }
    EXPECT_EQ(first, second);
}

TEST(Agent, ReportedNumbersAreGroundedInToolResults)
{
    World w;
    auto agent = w.agent();
    auto sid = w.platform.sessions().create();
    agent.handle_turn(sid, "run baseline with 3 replications");
    agent.handle_turn(sid, "create scenario lean from baseline set global_params.beta_price = 0.8");
    agent.handle_turn(sid, "run lean with 3 replications");
    for (auto msg : {"run baseline with 3 replications", "compare baseline and lean"}) {
        auto t = agent.handle_turn(sid, msg);
        std::string evidence;
        for (const auto& c : t.calls)
            evidence += c.result.dump();
        static const std::regex number(R"(-?\d+\.\d+(e[-+]?\d+)?)");
        for (auto it = std::sregex_iterator(t.response.begin(), t.response.end(), number);
             it != std::sregex_iterator(); ++it)
            EXPECT_NE(evidence.find(it->str()), std::string::npos) << it->str() << " in: " << t.response;
    }
}

TEST(Sessions, PersistedAndReloaded)
{
    TempDir dir;
    std::string sid;
    {
        Platform p({dir.path(), 2, {}});
        p.store().create(make_baseline({20, 24, 1}));
        Agent agent(p.tools(), p.sessions(), std::make_shared<ScriptedPlanner>());
        sid = p.sessions().create();
        agent.handle_turn(sid, "run baseline");
    }
    Platform p({dir.path(), 2, {}});
    EXPECT_TRUE(p.sessions().exists(sid));
    auto mem = p.sessions().snapshot(sid);
    EXPECT_EQ(mem.history.size(), 3u); // user, tool, agent
    EXPECT_TRUE(mem.latest_run("baseline").has_value());
    EXPECT_NE(p.sessions().create(), sid);
    auto log = testsupport::slurp(dir / "sessions" / sid / "transcript.jsonl");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 1);
    EXPECT_FALSE(p.sessions().exists("session-999999"));
}

TEST(Sessions, BindingsResolveNewestFirst)
{
    SessionMemory m;
    m.bindings.push_back({"run", "run-000001", "run-000001", "baseline"});
    m.bindings.push_back({"scenario", "cheap", "cheap", ""});
    m.bindings.push_back({"run", "run-000002", "run-000002", "baseline"});
    m.bindings.push_back({"scenario", "cheap", "cheap-2", ""});
    EXPECT_EQ(m.latest_run("baseline"), std::optional<std::string>("run-000002"));
    EXPECT_EQ(m.latest_run(), std::optional<std::string>("run-000002"));
    EXPECT_EQ(m.resolve_scenario("cheap"), std::optional<std::string>("cheap-2"));
    EXPECT_FALSE(m.resolve_scenario("other").has_value());
    auto back = session_from_json(to_json(m));
    EXPECT_EQ(back.bindings.size(), 4u);
}

TEST(Charts, SpecValidation)
{
    json ok{{"chart_type", "line"}, {"title", "t"}, {"x_label", "hour"}, {"x_unit", "h"}, {"y_label", "y"},
            {"y_unit", "u"}, {"series", {{{"label", "P1"}, {"x", {0, 1}}, {"y", {1.5, 2.5}}}}}};
    auto spec = chart_from_json(ok);
    EXPECT_EQ(to_json(spec)["series"][0]["x"].dump(), "[0,1]");
    auto bad = ok;
    bad["chart_type"] = "pie";
    EXPECT_THROW(chart_from_json(bad), UsageError);
    bad = ok;
    bad["series"][0]["y"] = {1.0};
    EXPECT_THROW(chart_from_json(bad), UsageError);
    bad = ok;
    bad["series"] = json::array();
    EXPECT_THROW(chart_from_json(bad), UsageError);
}

TEST(SystemContext, MentionsFieldsAndKpis)
{
    auto ctx = build_system_context();
    for (auto word : {"digital_savviness", "choice_function", "total_revenue", "time_to_threshold_hour"})
        EXPECT_NE(ctx.find(word), std::string::npos) << word;
}
