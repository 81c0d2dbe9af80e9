#include "simagent/agent.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <regex>

using nlohmann::json;
using nlohmann::ordered_json;

namespace simagent {

namespace {

std::string trim(std::string s)
{
    auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && (issp(s.back()) || s.back() == '.' || s.back() == '?' || s.back() == '!'))
        s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && issp(static_cast<unsigned char>(s[i])))
        ++i;
    return s.substr(i);
}

std::string identifier(std::string s)
{
    s = trim(std::move(s));
    std::string out;
    for (char c : s)
        out += std::isspace(static_cast<unsigned char>(c)) ? '_'
                                                           : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

json parse_literal(std::string text)
{
    text = trim(std::move(text));
    static const std::regex int_re(R"(^[-+]?\d+$)");
    static const std::regex num_re(R"(^[-+]?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?$)");
    if (std::regex_match(text, int_re))
        return std::stoll(text);
    if (std::regex_match(text, num_re))
        return std::stod(text);
    if (text == "true" || text == "false")
        return text == "true";
    if (text.size() >= 2 && (text.front() == '"' || text.front() == '\'') && text.back() == text.front())
        return text.substr(1, text.size() - 2);
    return text;
}

// Render numbers exactly as they appear in the serialized tool result.
std::string num(const ordered_json& v)
{
    return v.is_null() ? "n/a" : v.dump();
}

enum class Intent { none, run, create, compare, show, drivers, describe, list_scenarios, list_runs };

struct Parsed {
    Intent intent = Intent::none;
    std::vector<PlannedCall> calls;
    std::string text; // direct answer when no tool is needed
    bool chart = false;
};

std::regex icase(const char* pattern)
{
    return std::regex(pattern, std::regex::icase | std::regex::ECMAScript);
}

struct RunRef {
    std::optional<std::string> run_id;
    std::string missing; // explanation when unresolved
};

RunRef resolve_run(const SessionMemory& session, std::string token)
{
    token = trim(std::move(token));
    std::string lower = identifier(token);
    static const std::regex run_id_re(R"(^run-\d+$)", std::regex::icase);
    if (std::regex_match(token, run_id_re))
        return {lower, {}};
    if (lower == "the_last_run" || lower == "last_run" || lower == "the_latest_run") {
        if (auto id = session.latest_run())
            return {id, {}};
        return {std::nullopt, "There is no run in this session yet."};
    }
    const std::string scenario = session.resolve_scenario(token).value_or(token);
    if (auto id = session.latest_run(scenario))
        return {id, {}};
    return {std::nullopt, "No run of scenario '" + scenario +
                              "' in this session yet. Try: run " + scenario};
}

PlannedCall call(std::string tool, json args)
{
    return {"call_1", std::move(tool), std::move(args)};
}

Parsed parse(const SessionMemory& session, const std::string& raw)
{
    const std::string msg = trim(raw);
    static const std::regex run_re = icase(R"(^run\s+(\S+)(?:\s+with\s+(\d+)\s+replications?)?$)");
    static const std::regex create_re = icase(R"(^create\s+scenario\s+(\S+)\s+from\s+(\S+)\s+set\s+(.+)$)");
    static const std::regex assign_re = icase(R"(^(\w+)\.(\w+)(?:\[([^\]]+)\])?\s*=\s*(.+)$)");
    static const std::regex compare_re = icase(R"(^compare\s+(.+?)\s+and\s+(.+?)(?:\s+on\s+(\S+))?$)");
    static const std::regex show_re = icase(R"(^show\s+(.+?)\s+for\s+(.+?)(\s+as\s+(?:a\s+)?chart)?$)");
    static const std::regex drove_re = icase(R"(^what\s+drove\s+(?:the\s+)?(.+?)\s+in\s+(\S+)$)");
    static const std::regex does_re = icase(R"(^what\s+does\s+(.+?)\s+mean$)");
    static const std::regex list_re = icase(R"(^list\s+(scenarios|runs)$)");
    std::smatch m;
    Parsed p;

    if (std::regex_match(msg, m, run_re)) {
        json args{{"scenario_id", session.resolve_scenario(m[1].str()).value_or(m[1].str())}};
        args["replications"] = m[2].matched ? std::stoll(m[2].str()) : 1;
        args["base_seed"] = 42;
        p.intent = Intent::run;
        p.calls.push_back(call("run_simulation", std::move(args)));
        return p;
    }
    if (std::regex_match(msg, m, create_re)) {
        json patches = json::array();
        std::string rest = m[3].str();
        std::size_t start = 0;
        while (start <= rest.size()) {
            std::size_t comma = rest.find(',', start);
            std::string part = rest.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
            std::smatch a;
            const std::string item = trim(part);
            if (!std::regex_match(item, a, assign_re))
                return {};
            json patch{{"file", identifier(a[1].str())}};
            if (a[3].matched)
                patch["row"] = parse_literal(a[3].str());
            patch["field"] = a[2].str();
            patch["value"] = parse_literal(a[4].str());
            patches.push_back(std::move(patch));
            if (comma == std::string::npos)
                break;
            start = comma + 1;
        }
        p.intent = Intent::create;
        p.calls.push_back(call("modify_inputs", {{"base_id", session.resolve_scenario(m[2].str()).value_or(m[2].str())},
                                                 {"name", m[1].str()},
                                                 {"patches", patches}}));
        return p;
    }
    if (std::regex_match(msg, m, compare_re)) {
        RunRef a = resolve_run(session, m[1].str());
        RunRef b = resolve_run(session, m[2].str());
        p.intent = Intent::compare;
        if (!a.run_id || !b.run_id) {
            p.text = !a.run_id ? a.missing : b.missing;
            return p;
        }
        json args{{"run_a", *a.run_id}, {"run_b", *b.run_id}};
        if (m[3].matched)
            args["kpi"] = m[3].str();
        p.calls.push_back(call("compare_runs", std::move(args)));
        return p;
    }
    if (std::regex_match(msg, m, show_re)) {
        const std::string metric = identifier(m[1].str());
        static const std::vector<std::string> metrics{"new_adopters", "cumulative_adopters",
                                                      "market_share", "revenue"};
        if (std::find(metrics.begin(), metrics.end(), metric) == metrics.end())
            return {};
        RunRef r = resolve_run(session, m[2].str());
        p.intent = Intent::show;
        p.chart = m[3].matched;
        if (!r.run_id) {
            p.text = r.missing;
            return p;
        }
        p.calls.push_back(call("query_series", {{"run_id", *r.run_id}, {"metric", metric}}));
        return p;
    }
    if (std::regex_match(msg, m, drove_re)) {
        p.intent = Intent::drivers;
        p.calls.push_back(call("rank_drivers",
                               {{"scenario_id", session.resolve_scenario(m[2].str()).value_or(m[2].str())},
                                {"kpi", identifier(m[1].str())}}));
        return p;
    }
    if (std::regex_match(msg, m, does_re)) {
        p.intent = Intent::describe;
        p.calls.push_back(call("describe_field", {{"field", identifier(m[1].str())}}));
        return p;
    }
    if (std::regex_match(msg, m, list_re)) {
        const bool runs = identifier(m[1].str()) == "runs";
        p.intent = runs ? Intent::list_runs : Intent::list_scenarios;
        p.calls.push_back(call(runs ? "list_runs" : "list_scenarios", json::object()));
        return p;
    }
    return {};
}

std::string kpi_value(const ordered_json& kpis, const std::string& name)
{
    if (kpis.contains("aggregate") && kpis["aggregate"].contains(name))
        return num(kpis["aggregate"][name]["mean"]);
    const auto& first = kpis["per_replication"][0];
    if (name.rfind("market_share.", 0) == 0)
        return num(first["market_share"][name.substr(13)]);
    return num(first[name]);
}

std::string render_run(const ordered_json& r)
{
    const auto& run = r["run"];
    const auto& kpis = r["kpis"];
    const bool agg = kpis.contains("aggregate");
    std::string out = "Run " + run["run_id"].get<std::string>() + " of " +
                      run["scenario_id"].get<std::string>() + " finished with " +
                      num(run["replications"]) + " replication(s), base seed " + num(run["base_seed"]) +
                      ".\n";
    out += std::string(agg ? "Replication means" : "KPIs") + ":\n";
    out += "- final_adoption_rate: " + kpi_value(kpis, "final_adoption_rate") + "\n";
    out += "- total_revenue: " + kpi_value(kpis, "total_revenue") + "\n";
    const std::string ttt = kpi_value(kpis, "time_to_threshold_hour");
    out += "- time_to_threshold_hour: " + (ttt == "n/a" ? std::string("threshold not reached") : ttt) + "\n";
    for (const auto& [pid, share] : kpis["per_replication"][0]["market_share"].items())
        out += "- market_share." + pid + ": " + kpi_value(kpis, "market_share." + pid) + "\n";
    return out;
}

std::string render_patch(const ordered_json& p)
{
    const std::string file = p["file"].get<std::string>();
    const std::string op = p.value("op", std::string("set"));
    if (op == "append")
        return file + ": appended row " + p["value"].dump();
    if (op == "delete")
        return file + ": deleted row " + p["row"].dump();
    std::string target = file;
    if (p.contains("row"))
        target += "[" + (p["row"].is_string() ? p["row"].get<std::string>() : p["row"].dump()) + "]";
    return target + "." + p["field"].get<std::string>() + " = " + p["value"].dump();
}

std::string render_compare(const ordered_json& r)
{
    const std::string a = r["run_a"].get<std::string>();
    const std::string b = r["run_b"].get<std::string>();
    std::string out;
    bool all_zero = true;
    for (const auto& e : r["kpis"])
        if (!(e["delta"].is_number() && e["delta"].get<double>() == 0.0))
            all_zero = false;
    if (r.contains("focus")) {
        const auto& f = r["focus"];
        out += f["kpi"].get<std::string>() + ": " + num(f["value_a"]) + " in " + a + " vs " +
               num(f["value_b"]) + " in " + b + ", delta " + num(f["delta"]) +
               (f["pct_delta"].is_null() ? "" : " (" + num(f["pct_delta"]) + "%)") + ".\n";
    }
    if (all_zero)
        out += "All KPI deltas are zero between " + a + " and " + b + ".\n";
    out += "KPI deltas (" + b + " minus " + a + "), largest relative change first:\n";
    out += "kpi | " + a + " | " + b + " | delta | pct_delta\n";
    for (const auto& e : r["kpis"])
        out += e["kpi"].get<std::string>() + " | " + num(e["value_a"]) + " | " + num(e["value_b"]) +
               " | " + num(e["delta"]) + " | " + num(e["pct_delta"]) + "\n";
    for (const auto& n : r["notes"])
        out += "Note: " + n.get<std::string>() + "\n";
    return out;
}

std::string y_unit(const std::string& metric)
{
    if (metric == "market_share")
        return "share of population";
    if (metric == "revenue")
        return "currency per hour";
    return "consumers";
}

PlannerAction render(const Parsed& p, const ToolCall& c)
{
    PlannerAction out;
    if (!c.ok) {
        out.text = c.tool + " failed: " + c.result["error"].get<std::string>();
        return out;
    }
    const auto& r = c.result;
    switch (p.intent) {
    case Intent::run:
        out.text = render_run(r);
        break;
    case Intent::create: {
        out.text = "Created scenario " + r["scenario_id"].get<std::string>() + " from " +
                   r["parent"].get<std::string>() + ":\n";
        for (const auto& patch : r["patches"])
            out.text += "- " + render_patch(patch) + "\n";
        break;
    }
    case Intent::compare:
        out.text = render_compare(r);
        break;
    case Intent::show: {
        const std::string metric = r["metric"].get<std::string>();
        const auto& hours = r["hours"];
        if (p.chart) {
            ChartSpec chart;
            chart.chart_type = "line";
            chart.title = metric + " for " + r["run_id"].get<std::string>();
            chart.x_label = "hour";
            chart.x_unit = "h";
            chart.y_label = metric;
            chart.y_unit = y_unit(metric);
            for (const auto& [pid, values] : r["series"].items()) {
                ChartSeries s;
                s.label = pid;
                for (const auto& h : hours)
                    s.x.push_back(h);
                s.y = values.get<std::vector<double>>();
                chart.series.push_back(std::move(s));
            }
            out.charts.push_back(std::move(chart));
            out.text = "Line chart of " + metric + " for " + r["run_id"].get<std::string>() +
                       ", replication " + num(r["replication"]) + ", one line per product.";
        } else {
            out.text = metric + " for " + r["run_id"].get<std::string>() + ", replication " +
                       num(r["replication"]) + ":\n";
            for (const auto& [pid, values] : r["series"].items())
                out.text += "- " + pid + ": " + num(values.back()) + " at hour " + num(hours.back()) + "\n";
        }
        break;
    }
    case Intent::drivers: {
        ChartSpec chart;
        chart.chart_type = "tornado";
        chart.title = "Drivers of " + r["kpi"].get<std::string>() + " in " + r["scenario_id"].get<std::string>();
        chart.x_label = "parameter";
        chart.y_label = "influence on " + r["kpi"].get<std::string>();
        chart.y_unit = "KPI units";
        ChartSeries s;
        s.label = "influence";
        out.text = "Drivers of " + r["kpi"].get<std::string>() + " in " + r["scenario_id"].get<std::string>() +
                   " (each parameter moved by " + num(r["delta_pct"]) + "%, baseline " +
                   num(r["kpi_baseline"]) + "), strongest first:\n";
        for (const auto& d : r["drivers"]) {
            s.x.push_back(d["parameter"]);
            s.y.push_back(d["influence"].get<double>());
            out.text += "- " + d["parameter"].get<std::string>() + ": influence " + num(d["influence"]) +
                        " (up " + num(d["kpi_up"]) + ", down " + num(d["kpi_down"]) + ")";
            if (d.contains("note"))
                out.text += "; " + d["note"].get<std::string>();
            out.text += "\n";
        }
        for (const auto& n : r["notes"])
            out.text += "Note: " + n.get<std::string>() + "\n";
        chart.series.push_back(std::move(s));
        out.charts.push_back(std::move(chart));
        break;
    }
    case Intent::describe: {
        out.text = r["field"].get<std::string>() + " (" + r["file"].get<std::string>() + "): " +
                   r["description"].get<std::string>();
        out.text += " Type " + r["type"].get<std::string>();
        if (r.contains("range") && !r["range"].get<std::string>().empty())
            out.text += ", " + r["range"].get<std::string>();
        out.text += ".";
        if (r.contains("choices"))
            for (const auto& ch : r["choices"])
                out.text += " " + num(ch["value"]) + " = " + ch["meaning"].get<std::string>() + ".";
        if (r.contains("example") && !r["example"].get<std::string>().empty())
            out.text += " Example: " + r["example"].get<std::string>() + ".";
        break;
    }
    case Intent::list_scenarios: {
        if (r["scenarios"].empty()) {
            out.text = "No scenarios yet. Run `simagent init` to create the baseline.";
            break;
        }
        out.text = "Scenarios:\n";
        for (const auto& s : r["scenarios"]) {
            out.text += "- " + s["scenario_id"].get<std::string>();
            if (!s["parent"].is_null())
                out.text += " (from " + s["parent"].get<std::string>() + ")";
            out.text += "\n";
        }
        break;
    }
    case Intent::list_runs: {
        if (r["runs"].empty()) {
            out.text = "No runs yet.";
            break;
        }
        out.text = "Runs, newest first:\n";
        for (const auto& run : r["runs"])
            out.text += "- " + run["run_id"].get<std::string>() + ": " + run["scenario_id"].get<std::string>() +
                        ", " + run["status"].get<std::string>() + "\n";
        break;
    }
    case Intent::none:
        break;
    }
    return out;
}

} // namespace

const std::string& ScriptedPlanner::help_text()
{
    static const std::string text =
        "I did not understand that. I understand these commands (one per message):\n"
        "  run <scenario> [with N replications]\n"
        "  create scenario <name> from <base> set <file>.<field>[<row>] = <value> {, ...}\n"
        "  compare <run-or-scenario> and <run-or-scenario> [on <kpi>]\n"
        "  show <metric> for <run-or-scenario> [as chart]\n"
        "  what drove <kpi> in <scenario>\n"
        "  what does <field> mean\n"
        "  list scenarios | list runs\n"
        "Metrics: new_adopters, cumulative_adopters, market_share, revenue. "
        "KPIs: final_adoption_rate, total_revenue, time_to_threshold_hour, market_share.<product_id>.";
    return text;
}

PlannerAction ScriptedPlanner::plan(const PlanContext& ctx)
{
    if (ctx.calls.empty()) {
        Parsed p = parse(ctx.session, ctx.user_message);
        PlannerAction a;
        if (p.intent == Intent::none) {
            a.text = help_text();
        } else if (p.calls.empty()) {
            a.text = p.text;
        } else {
            a.calls = p.calls;
        }
        return a;
    }
    // Rendering depends only on the executed call, so bindings made this turn cannot change it.
    static const std::regex chart_re = icase(R"(\s+as\s+(?:a\s+)?chart[.?!\s]*$)");
    static const std::map<std::string, Intent> by_tool{
        {"run_simulation", Intent::run},      {"modify_inputs", Intent::create},
        {"compare_runs", Intent::compare},    {"query_series", Intent::show},
        {"rank_drivers", Intent::drivers},    {"describe_field", Intent::describe},
        {"list_scenarios", Intent::list_scenarios}, {"list_runs", Intent::list_runs}};
    Parsed p;
    const ToolCall& last = ctx.calls.back();
    if (auto it = by_tool.find(last.tool); it != by_tool.end())
        p.intent = it->second;
    p.chart = std::regex_search(ctx.user_message, chart_re);
    return render(p, last);
}

} // namespace simagent
