#include "support/support.hpp"

#include "simagent/platform.hpp"

#include <gtest/gtest.h>

using namespace simagent;
using nlohmann::json;
using testsupport::TempDir;

namespace {

struct World {
    TempDir dir;
    Platform platform{{dir.path(), 2, {}}};

    World() { platform.store().create(make_baseline({30, 48, 1})); }
    nlohmann::ordered_json call(const std::string& tool, const json& args)
    {
        return platform.tools().invoke(tool, args);
    }
};

ToolDescriptor echo_tool(std::string name)
{
    return {std::move(name),
            "echoes x",
            {{"x", ParamType::integer, true, "value"}},
            {"x"},
            [](const json& a) { return nlohmann::ordered_json{{"x", a.at("x").get<std::int64_t>()}}; }};
}

} // namespace

TEST(ToolSchema, ValidationMessages)
{
    std::vector<ParamSpec> params{{"n", ParamType::integer, true, "count"},
                                  {"mode", ParamType::string, false, "mode", {"a", "b"}},
                                  {"xs", ParamType::array, false, "list", {}, ParamType::number}};
    EXPECT_FALSE(validate_args(params, {{"n", 1}}));
    EXPECT_NE(validate_args(params, json::object())->find("missing required argument 'n'"), std::string::npos);
    EXPECT_NE(validate_args(params, {{"n", "1"}})->find("'n' must be of type integer"), std::string::npos);
    EXPECT_NE(validate_args(params, {{"n", 1}, {"zzz", 1}})->find("unknown argument 'zzz'"), std::string::npos);
    EXPECT_NE(validate_args(params, {{"n", 1}, {"mode", "c"}})->find("must be one of"), std::string::npos);
    EXPECT_TRUE(validate_args(params, {{"n", 1}, {"xs", {1, "a"}}}).has_value());
    EXPECT_FALSE(validate_args(params, {{"n", 1}, {"xs", {1, 2.5}}}));
    EXPECT_TRUE(validate_args(params, json::array()).has_value());

    auto schema = parameter_schema(params);
    EXPECT_EQ(schema["type"], "object");
    EXPECT_EQ(schema["required"].dump(), R"(["n"])");
    EXPECT_EQ(schema["additionalProperties"], false);
    EXPECT_EQ(schema["properties"]["xs"]["items"]["type"], "number");
    EXPECT_EQ(schema["properties"]["mode"]["enum"].dump(), R"(["a","b"])");
}

TEST(ToolRegistry, RegistrationRules)
{
    ToolRegistry r;
    r.register_tool(echo_tool("echo"));
    EXPECT_THROW(r.register_tool(echo_tool("echo")), ConflictError);

    auto undeclared = echo_tool("undeclared");
    undeclared.bound_params = {"x", "y"};
    EXPECT_THROW(r.register_tool(undeclared), ConfigError);

    auto unread = echo_tool("unread");
    unread.params.push_back({"y", ParamType::string, false, "never read"});
    EXPECT_THROW(r.register_tool(unread), ConfigError);

    auto blank = echo_tool("blank");
    blank.description.clear();
    EXPECT_THROW(r.register_tool(blank), ConfigError);

    EXPECT_EQ(r.names(), std::vector<std::string>{"echo"});
    EXPECT_EQ(r.invoke("echo", {{"x", 3}})["x"], 3);
    EXPECT_THROW(r.invoke("echo", {{"x", "3"}}), UsageError);
    EXPECT_THROW(r.invoke("nope", json::object()), UsageError);
}

TEST(BuiltinTools, NineOperationsWithSchemas)
{
    World w;
    const std::vector<std::string> expected{"run_simulation", "modify_inputs", "summarize_kpis",
                                            "query_series",   "compare_runs",  "rank_drivers",
                                            "list_scenarios", "list_runs",     "describe_field"};
    auto names = w.platform.tools().names();
    EXPECT_EQ(std::set<std::string>(names.begin(), names.end()),
              std::set<std::string>(expected.begin(), expected.end()));
    for (const auto& t : w.platform.tools().tools()) {
        EXPECT_FALSE(t.description.empty()) << t.name;
        auto s = parameter_schema(t.params);
        EXPECT_EQ(s["type"], "object") << t.name;
    }
}

TEST(BuiltinTools, RunModifyCompareFlow)
{
    World w;
    auto run = w.call("run_simulation", {{"scenario_id", "baseline"}, {"replications", 2}, {"base_seed", 5}});
    EXPECT_EQ(run["run"]["status"], "succeeded");
    EXPECT_EQ(run["run"]["replications"], 2);
    EXPECT_TRUE(run["kpis"].contains("aggregate"));
    const std::string a = run["run"]["run_id"];

    auto mod = w.call("modify_inputs",
                      {{"base_id", "baseline"},
                       {"name", "cheaper"},
                       {"patches", json::array({{{"file", "products"}, {"row", "P1"}, {"field", "price"}, {"value", 4.5}}})}});
    EXPECT_EQ(mod["scenario_id"], "cheaper");
    EXPECT_EQ(mod["parent"], "baseline");

    const std::string b = w.call("run_simulation", {{"scenario_id", "cheaper"}, {"replications", 2}, {"base_seed", 5}})["run"]["run_id"];
    auto cmp = w.call("compare_runs", {{"run_a", a}, {"run_b", b}, {"kpi", "total_revenue"}});
    EXPECT_EQ(cmp["focus"]["kpi"], "total_revenue");
    auto direct = w.platform.analyzer().compare_runs(a, b);
    for (const auto& e : direct.entries)
        if (e.kpi == "total_revenue")
            EXPECT_EQ(cmp["focus"]["delta"].get<double>(), *e.delta);

    auto kpis = w.call("summarize_kpis", {{"run_id", a}});
    EXPECT_EQ(kpis["run_id"], a);
    auto series = w.call("query_series", {{"run_id", a}, {"metric", "revenue"}, {"downsample", "daily-mean"}});
    EXPECT_EQ(series["hours"].size(), 2u);

    auto runs = w.call("list_runs", {{"scenario_id", "cheaper"}});
    EXPECT_EQ(runs["runs"].size(), 1u);
    auto scenarios = w.call("list_scenarios", json::object());
    EXPECT_EQ(scenarios["scenarios"].size(), 2u);
}

TEST(BuiltinTools, InvalidPatchSurfacesReport)
{
    World w;
    try {
        w.call("modify_inputs", {{"base_id", "baseline"},
                                 {"patches", json::array({{{"file", "population"}, {"row", "1"},
                                                           {"field", "digital_savviness"}, {"value", 11}}})}});
        FAIL();
    } catch (const ValidationError& e) {
        EXPECT_NE(e.report().to_text().find("1..10"), std::string::npos);
    }
    EXPECT_THROW(w.call("modify_inputs", {{"base_id", "baseline"}, {"patches", json::array({{{"file", "nosuch"}}})}}),
                 Error);
}

TEST(BuiltinTools, DescribeField)
{
    World w;
    auto d = w.call("describe_field", {{"field", "digital_savviness"}});
    EXPECT_EQ(d["file"], "population");
    EXPECT_FALSE(d["description"].get<std::string>().empty());
    try {
        w.call("describe_field", {{"field", "mood"}});
        FAIL();
    } catch (const NotFoundError& e) {
        EXPECT_NE(std::string(e.what()).find("beta_price"), std::string::npos);
    }
}

TEST(BuiltinTools, DefaultDriverSetDependsOnChoiceRule)
{
    GlobalParams g;
    g.choice_function = 1;
    auto base = default_driver_parameters(g);
    EXPECT_EQ(std::count(base.begin(), base.end(), "temperature"), 0);
    g.choice_function = 2;
    auto logit = default_driver_parameters(g);
    EXPECT_EQ(std::count(logit.begin(), logit.end(), "temperature"), 1);
    g.choice_function = 3;
    auto eps = default_driver_parameters(g);
    EXPECT_EQ(std::count(eps.begin(), eps.end(), "epsilon"), 1);
}
