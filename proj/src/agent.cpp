#include "simagent/agent.hpp"

#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace simagent {

// --- charts ----------------------------------------------------------------

ordered_json to_json(const ChartSpec& c)
{
    ordered_json j;
    j["chart_type"] = c.chart_type;
    j["title"] = c.title;
    j["x_label"] = c.x_label;
    j["x_unit"] = c.x_unit;
    j["y_label"] = c.y_label;
    j["y_unit"] = c.y_unit;
    j["series"] = ordered_json::array();
    for (const auto& s : c.series) {
        ordered_json x = ordered_json::array();
        for (const auto& v : s.x)
            x.push_back(v);
        j["series"].push_back({{"label", s.label}, {"x", x}, {"y", s.y}});
    }
    return j;
}

ChartSpec chart_from_json(const json& j)
{
    if (!j.is_object())
        throw UsageError("chart must be an object");
    ChartSpec c;
    c.chart_type = j.value("chart_type", std::string());
    if (c.chart_type != "line" && c.chart_type != "bar" && c.chart_type != "tornado")
        throw UsageError("chart_type must be one of {line, bar, tornado}");
    auto text = [&](const char* key) {
        if (!j.contains(key))
            return std::string();
        if (!j[key].is_string())
            throw UsageError(std::string(key) + " must be a string");
        return j[key].get<std::string>();
    };
    c.title = text("title");
    c.x_label = text("x_label");
    c.x_unit = text("x_unit");
    c.y_label = text("y_label");
    c.y_unit = text("y_unit");
    if (!j.contains("series") || !j["series"].is_array() || j["series"].empty())
        throw UsageError("chart needs at least one series");
    for (const auto& s : j["series"]) {
        if (!s.is_object() || !s.contains("x") || !s.contains("y") || !s["x"].is_array() ||
            !s["y"].is_array())
            throw UsageError("each series needs x and y arrays");
        ChartSeries out;
        out.label = s.value("label", std::string());
        for (const auto& x : s["x"]) {
            const bool ok = c.chart_type == "line" ? x.is_number() : (x.is_number() || x.is_string());
            if (!ok)
                throw UsageError(c.chart_type == "line" ? "line chart x values must be numbers"
                                                        : "bar x values must be numbers or labels");
            out.x.push_back(x.is_string()           ? ordered_json(x.get<std::string>())
                            : x.is_number_integer() ? ordered_json(x.get<std::int64_t>())
                                                    : ordered_json(x.get<double>()));
        }
        for (const auto& y : s["y"]) {
            if (!y.is_number())
                throw UsageError("y values must be numbers");
            out.y.push_back(y.get<double>());
        }
        if (out.x.size() != out.y.size())
            throw UsageError("series '" + out.label + "' has " + std::to_string(out.x.size()) +
                             " x values but " + std::to_string(out.y.size()) + " y values");
        c.series.push_back(std::move(out));
    }
    return c;
}

const std::vector<ParamSpec>& chart_params()
{
    static const std::vector<ParamSpec> params{
        {"chart_type", ParamType::string, true, "line, bar or tornado", {"line", "bar", "tornado"}, {}},
        {"title", ParamType::string, true, "chart title", {}, {}},
        {"x_label", ParamType::string, false, "x axis label", {}, {}},
        {"x_unit", ParamType::string, false, "x axis unit", {}, {}},
        {"y_label", ParamType::string, false, "y axis label", {}, {}},
        {"y_unit", ParamType::string, false, "y axis unit", {}, {}},
        {"series", ParamType::array, true,
         "list of {label, x, y}; x and y of equal length. Tornado bars: x = parameter names, "
         "y = influence",
         {}, ParamType::object},
    };
    return params;
}

// --- turns -----------------------------------------------------------------

ordered_json to_json(const ToolCall& c)
{
    ordered_json j;
    j["id"] = c.id;
    j["tool"] = c.tool;
    j["arguments"] = c.arguments;
    j["ok"] = c.ok;
    j["result"] = c.result;
    j["duration_ms"] = c.duration_ms;
    return j;
}

ordered_json to_json(const AgentTurn& t)
{
    ordered_json j;
    j["user_message"] = t.user_message;
    j["planner"] = t.planner;
    j["iterations"] = t.iterations;
    j["tool_calls"] = ordered_json::array();
    for (const auto& c : t.calls)
        j["tool_calls"].push_back(to_json(c));
    j["response"] = t.response;
    j["charts"] = ordered_json::array();
    for (const auto& c : t.charts)
        j["charts"].push_back(to_json(c));
    j["error"] = t.error;
    return j;
}

// --- memory ----------------------------------------------------------------

std::optional<std::string> SessionMemory::resolve_scenario(std::string_view name) const
{
    for (auto it = bindings.rbegin(); it != bindings.rend(); ++it)
        if (it->kind == "scenario" && (it->name == name || it->id == name))
            return it->id;
    return std::nullopt;
}

std::optional<std::string> SessionMemory::latest_run(std::optional<std::string_view> scenario_id) const
{
    for (auto it = bindings.rbegin(); it != bindings.rend(); ++it)
        if (it->kind == "run" && (!scenario_id || it->scenario_id == *scenario_id))
            return it->id;
    return std::nullopt;
}

ordered_json to_json(const SessionMemory& s)
{
    ordered_json j;
    j["session_id"] = s.session_id;
    j["created_at"] = s.created_at;
    j["history"] = ordered_json::array();
    for (const auto& h : s.history) {
        ordered_json e{{"role", h.role}, {"content", h.content}};
        if (!h.data.is_null())
            e["data"] = h.data;
        j["history"].push_back(std::move(e));
    }
    j["bindings"] = ordered_json::array();
    for (const auto& b : s.bindings) {
        ordered_json e{{"kind", b.kind}, {"name", b.name}, {"id", b.id}};
        if (!b.scenario_id.empty())
            e["scenario_id"] = b.scenario_id;
        j["bindings"].push_back(std::move(e));
    }
    return j;
}

SessionMemory session_from_json(const json& j)
{
    SessionMemory s;
    s.session_id = j.at("session_id").get<std::string>();
    s.created_at = j.value("created_at", std::string());
    for (const auto& e : j.value("history", json::array())) {
        HistoryEntry h;
        h.role = e.at("role").get<std::string>();
        h.content = e.value("content", std::string());
        if (e.contains("data"))
            h.data = ordered_json::parse(e["data"].dump());
        s.history.push_back(std::move(h));
    }
    for (const auto& e : j.value("bindings", json::array()))
        s.bindings.push_back({e.at("kind").get<std::string>(), e.at("name").get<std::string>(),
                              e.at("id").get<std::string>(), e.value("scenario_id", std::string())});
    return s;
}

std::string build_system_context()
{
    std::ostringstream out;
    out << "You operate a consumer product-adoption simulator through tools. Every number you "
           "report must come from a tool result.\n\n"
           "Model mechanics: the simulation advances in hourly steps. Each hour scheduled events "
           "are applied, then every consumer who has not adopted yet becomes active with "
           "probability activation_prob and chooses among the products and a no-purchase option. "
           "Utility of product j for a consumer: beta_quality*quality_j - beta_price*price_j + "
           "beta_digital*(digital_savviness/10)*digital_channel_j + beta_social*share_j, where "
           "share_j is the product's adopter share of the population at the start of the hour; "
           "the no-purchase option has utility u_no_purchase. choice_function selects the rule: "
           "1 = argmax (ties to the lower index, no-purchase first), 2 = multinomial logit with "
           "temperature, 3 = epsilon-greedy (uniform random option with probability epsilon). "
           "beta_social is the feedback loop: adoption raises share, which raises utility, which "
           "speeds further adoption. Adoption is permanent; revenue is new adopters times the "
           "price in force that hour.\n\n"
           "KPIs: final_adoption_rate = adopters / population at the last hour; total_revenue = "
           "sum of all revenue rows; time_to_threshold_hour = first hour with cumulative adopters "
           ">= kpi_threshold_pct * population / 100 (null if never); market_share.<product_id> = "
           "product adopters / population at the last hour. With several replications the "
           "summary adds mean, population std and nearest-rank p5/p95.\n\n"
           "Input fields:\n";
    for (const auto& d : all_field_docs()) {
        out << "- " << file_name(d.file) << " " << d.field << " (" << d.type;
        if (!d.range.empty())
            out << ", " << d.range;
        out << "): " << d.description;
        for (const auto& c : d.choices)
            out << " [" << c.value << " = " << c.meaning << "]";
        out << "\n";
    }
    return out.str();
}

// --- session store ---------------------------------------------------------

namespace {

std::string utc_timestamp()
{
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_atomic(const fs::path& path, const std::string& text)
{
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out)
            throw IoError("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

} // namespace

SessionStore::SessionStore(fs::path root) : root_(std::move(root))
{
    fs::create_directories(root_);
    for (const auto& entry : fs::directory_iterator(root_)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("session-", 0) == 0) {
            try {
                next_ = std::max<std::uint64_t>(next_, std::stoull(name.substr(8)) + 1);
            } catch (const std::exception&) {
            }
        }
    }
}

std::string SessionStore::create()
{
    std::lock_guard guard(mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "session-%06llu", static_cast<unsigned long long>(next_++));
    auto slot = std::make_unique<Slot>();
    slot->memory.session_id = buf;
    slot->memory.created_at = utc_timestamp();
    slot->memory.system_context = build_system_context();
    fs::create_directories(root_ / buf);
    write_atomic(root_ / buf / "session.json", to_json(slot->memory).dump(2) + "\n");
    slots_.emplace(buf, std::move(slot));
    return buf;
}

bool SessionStore::exists(std::string_view id) const
{
    std::lock_guard guard(mutex_);
    return slots_.count(id) || (!id.empty() && id.find('/') == std::string_view::npos &&
                                fs::exists(root_ / std::string(id) / "session.json"));
}

SessionStore::Slot& SessionStore::slot(std::string_view id) const
{
    std::lock_guard guard(mutex_);
    if (auto it = slots_.find(id); it != slots_.end())
        return *it->second;
    const fs::path file = root_ / std::string(id) / "session.json";
    if (id.empty() || id.find('/') != std::string_view::npos || !fs::exists(file))
        throw NotFoundError("unknown session '" + std::string(id) + "'");
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    auto s = std::make_unique<Slot>();
    s->memory = session_from_json(json::parse(ss.str()));
    s->memory.system_context = build_system_context();
    auto& ref = *s;
    slots_.emplace(std::string(id), std::move(s));
    return ref;
}

SessionMemory SessionStore::snapshot(std::string_view id) const
{
    Slot& s = slot(id);
    std::lock_guard turn(s.turn_mutex);
    return s.memory;
}

SessionStore::Lease SessionStore::acquire(std::string_view id, const std::function<void()>& on_wait)
{
    Slot& s = slot(id);
    Lease lease;
    lease.lock_ = std::unique_lock(s.turn_mutex, std::try_to_lock);
    if (!lease.lock_.owns_lock()) {
        lease.waited_ = true;
        if (on_wait)
            on_wait();
        lease.lock_.lock();
    }
    lease.memory_ = &s.memory;
    return lease;
}

void SessionStore::commit(const SessionMemory& memory, const AgentTurn& turn)
{
    const fs::path dir = root_ / memory.session_id;
    fs::create_directories(dir);
    write_atomic(dir / "session.json", to_json(memory).dump(2) + "\n");
    std::ofstream log(dir / "transcript.jsonl", std::ios::binary | std::ios::app);
    log << to_json(turn).dump() << "\n";
    if (!log)
        throw IoError("cannot append to " + (dir / "transcript.jsonl").string());
}

// --- agent loop ------------------------------------------------------------

Agent::Agent(const ToolRegistry& tools, SessionStore& sessions, std::shared_ptr<Planner> planner,
             AgentOptions options)
    : tools_(tools), sessions_(sessions), planner_(std::move(planner)), options_(options)
{
    if (options_.max_tool_calls < 1)
        throw ConfigError("max_tool_calls must be at least 1");
}

namespace {

void bind_results(SessionMemory& memory, const ToolCall& call)
{
    if (!call.ok)
        return;
    if (call.tool == "run_simulation" && call.result.contains("run")) {
        const auto& run = call.result["run"];
        memory.bindings.push_back({"run", run["run_id"].get<std::string>(),
                                   run["run_id"].get<std::string>(),
                                   run["scenario_id"].get<std::string>()});
    } else if (call.tool == "modify_inputs" && call.result.contains("name")) {
        memory.bindings.push_back({"scenario", call.result["name"].get<std::string>(),
                                   call.result["scenario_id"].get<std::string>(), {}});
    }
}

std::string fallback_text(const std::vector<ToolCall>& calls, std::size_t limit)
{
    std::string done;
    for (const auto& c : calls)
        done += (done.empty() ? "" : ", ") + c.tool + (c.ok ? "" : " (failed)");
    return "I stopped after " + std::to_string(limit) +
           " tool calls without reaching an answer. Completed so far: " + done + ".";
}

} // namespace

AgentTurn Agent::handle_turn(std::string_view session_id, const std::string& user_message,
                             const EventSink& sink)
{
    auto emit = [&](std::string type, ordered_json payload) {
        if (sink)
            sink({std::move(type), std::move(payload)});
    };

    auto lease = sessions_.acquire(session_id, [&] {
        emit("text", {{"text", "Another message in this session is still being handled; "
                               "this one is queued behind it."},
                      {"notice", "queued"}});
    });
    SessionMemory& memory = lease.memory();

    AgentTurn turn;
    turn.user_message = user_message;
    turn.planner = planner_->name();

    // Work on a copy; the session only changes once the turn has a final response.
    SessionMemory working = memory;
    working.history.push_back({"user", user_message, nullptr});

    std::size_t next_id = 1;
    bool finished = false;
    try {
        while (!finished) {
            if (turn.iterations == options_.max_tool_calls) {
                turn.response = fallback_text(turn.calls, options_.max_tool_calls);
                break;
            }
            PlanContext ctx{working, user_message, turn.calls, tools_};
            PlannerAction action = planner_->plan(ctx);
            if (action.calls.empty()) {
                turn.response = action.text;
                turn.charts.insert(turn.charts.end(), action.charts.begin(), action.charts.end());
                finished = true;
                break;
            }
            for (auto& planned : action.calls) {
                if (turn.iterations == options_.max_tool_calls) {
                    turn.response = fallback_text(turn.calls, options_.max_tool_calls);
                    finished = true;
                    break;
                }
                ToolCall call;
                call.id = planned.id.empty() ? "call_" + std::to_string(next_id) : planned.id;
                ++next_id;
                call.tool = planned.tool;
                call.arguments = planned.arguments;
                emit("tool_call",
                     {{"id", call.id}, {"tool", call.tool}, {"arguments", call.arguments}});

                const auto start = std::chrono::steady_clock::now();
                try {
                    if (call.tool == "emit_chart") {
                        if (auto err = validate_args(chart_params(), call.arguments))
                            throw UsageError("emit_chart: " + *err);
                        turn.charts.push_back(chart_from_json(call.arguments));
                        call.result = {{"accepted", true}};
                    } else {
                        call.result = tools_.invoke(call.tool, call.arguments);
                    }
                    call.ok = true;
                } catch (const std::exception& e) {
                    call.result = {{"error", e.what()}};
                    if (const auto* v = dynamic_cast<const ValidationError*>(&e))
                        call.result["report"] = to_json(v->report());
                }
                call.duration_ms = std::chrono::duration<double, std::milli>(
                                       std::chrono::steady_clock::now() - start)
                                       .count();
                ++turn.iterations;
                emit("tool_result", {{"id", call.id},
                                     {"tool", call.tool},
                                     {"ok", call.ok},
                                     {"result", call.result}});
                bind_results(working, call);
                working.history.push_back({"tool", call.tool, to_json(call)});
                turn.calls.push_back(std::move(call));
            }
        }
    } catch (const std::exception& e) {
        turn.error = true;
        turn.response = std::string("The turn failed: ") + e.what();
        turn.charts.clear();
    }

    if (turn.error) {
        // Keep the record of what was asked, but no bindings from a failed turn.
        memory.history.push_back({"user", user_message, nullptr});
        for (const auto& c : turn.calls)
            memory.history.push_back({"tool", c.tool, to_json(c)});
        memory.history.push_back({"agent", turn.response, {{"error", true}}});
        emit("error", {{"message", turn.response}});
    } else {
        ordered_json charts = ordered_json::array();
        for (const auto& c : turn.charts)
            charts.push_back(to_json(c));
        working.history.push_back({"agent", turn.response, {{"charts", charts}}});
        memory = std::move(working);
        for (const auto& c : turn.charts)
            emit("chart", to_json(c));
        if (!turn.response.empty())
            emit("text", {{"text", turn.response}});
    }

    sessions_.commit(memory, turn);
    emit("done", {{"tool_calls", turn.calls.size()},
                  {"iterations", turn.iterations},
                  {"planner", turn.planner},
                  {"error", turn.error}});
    return turn;
}

} // namespace simagent
