#include "simagent/agent.hpp"

#include <httplib.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using nlohmann::json;
using nlohmann::ordered_json;

namespace simagent {

LlmConfig load_llm_config(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ConfigError("cannot read LLM config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    json j;
    try {
        j = json::parse(ss.str());
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    LlmConfig c;
    c.base_url = j.value("base_url", c.base_url);
    c.model = j.value("model", c.model);
    c.api_key_env = j.value("api_key_env", c.api_key_env);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    if (c.base_url.empty() || c.model.empty())
        throw ConfigError(path.string() + ": base_url and model must be set");
    return c;
}

LlmPlanner::LlmPlanner(LlmConfig config) : config_(std::move(config)) {}

namespace {

ordered_json function_tool(const std::string& name, const std::string& description,
                           const std::vector<ParamSpec>& params)
{
    return {{"type", "function"},
            {"function",
             {{"name", name}, {"description", description}, {"parameters", parameter_schema(params)}}}};
}

ordered_json assistant_call(const std::string& id, const std::string& tool, const std::string& args)
{
    return {{"id", id}, {"type", "function"}, {"function", {{"name", tool}, {"arguments", args}}}};
}

struct Proposed {
    std::string id;
    std::string tool;
    std::string raw_args;
    json args;
    std::string error;
};

} // namespace

ordered_json LlmPlanner::request_body(const PlanContext& ctx) const
{
    ordered_json messages = ordered_json::array();
    messages.push_back({{"role", "system"}, {"content", ctx.session.system_context}});

    // Earlier turns contribute their text only; the current turn also carries its tool exchange.
    std::size_t current = ctx.session.history.size();
    for (std::size_t i = ctx.session.history.size(); i-- > 0;)
        if (ctx.session.history[i].role == "user") {
            current = i;
            break;
        }
    for (std::size_t i = 0; i < current; ++i) {
        const auto& h = ctx.session.history[i];
        if (h.role == "user")
            messages.push_back({{"role", "user"}, {"content", h.content}});
        else if (h.role == "agent")
            messages.push_back({{"role", "assistant"}, {"content", h.content}});
    }
    messages.push_back({{"role", "user"}, {"content", ctx.user_message}});
    for (const auto& c : ctx.calls) {
        messages.push_back({{"role", "assistant"},
                            {"content", nullptr},
                            {"tool_calls", {assistant_call(c.id, c.tool, c.arguments.dump())}}});
        messages.push_back({{"role", "tool"}, {"tool_call_id", c.id}, {"content", c.result.dump()}});
    }

    ordered_json tools = ordered_json::array();
    for (const auto& t : ctx.tools.tools())
        tools.push_back(function_tool(t.name, t.description, t.params));
    tools.push_back(function_tool(
        "emit_chart",
        "Show a chart to the user. Use data from earlier tool results only. chart_type line for "
        "hourly series, bar for categorical values, tornado for driver rankings.",
        chart_params()));

    ordered_json body;
    body["model"] = config_.model;
    body["messages"] = std::move(messages);
    body["tools"] = std::move(tools);
    body["tool_choice"] = "auto";
    return body;
}

json LlmPlanner::post(const ordered_json& body) const
{
    const auto scheme = config_.base_url.find("://");
    if (scheme == std::string::npos)
        throw PlannerError("LLM base_url must start with http:// or https://");
    const auto slash = config_.base_url.find('/', scheme + 3);
    const std::string origin = config_.base_url.substr(0, slash);
    std::string path = slash == std::string::npos ? std::string() : config_.base_url.substr(slash);
    while (!path.empty() && path.back() == '/')
        path.pop_back();
    path += "/chat/completions";

    httplib::Client client(origin);
    client.set_connection_timeout(config_.timeout_seconds, 0);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key)
        headers.emplace("Authorization", std::string("Bearer ") + key);

    auto res = client.Post(path, headers, body.dump(), "application/json");
    if (!res)
        throw PlannerError("LLM endpoint " + origin + " unreachable: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403)
        throw PlannerError("LLM endpoint rejected the credential (HTTP " + std::to_string(res->status) +
                           "); set " + config_.api_key_env);
    if (res->status != 200)
        throw PlannerError("LLM endpoint returned HTTP " + std::to_string(res->status) + ": " +
                           res->body.substr(0, 300));
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw PlannerError(std::string("LLM response is not JSON: ") + e.what());
    }
}

PlannerAction LlmPlanner::plan(const PlanContext& ctx)
{
    ordered_json body = request_body(ctx);

    for (int attempt = 0;; ++attempt) {
        json response = post(body);
        if (!response.contains("choices") || !response["choices"].is_array() ||
            response["choices"].empty() || !response["choices"][0].contains("message"))
            throw PlannerError("LLM response has no choices[0].message");
        const json& message = response["choices"][0]["message"];

        const json tool_calls = message.value("tool_calls", json(nullptr));
        if (!tool_calls.is_array() || tool_calls.empty()) {
            PlannerAction a;
            const auto& content = message.value("content", json(nullptr));
            a.text = content.is_string() ? content.get<std::string>() : std::string();
            return a;
        }

        std::vector<Proposed> proposed;
        bool invalid = false;
        for (const auto& tc : tool_calls) {
            Proposed p;
            p.id = tc.value("id", std::string("call_") + std::to_string(proposed.size() + 1));
            const json fn = tc.value("function", json::object());
            p.tool = fn.value("name", std::string());
            const json raw = fn.value("arguments", json("{}"));
            p.raw_args = raw.is_string() ? raw.get<std::string>() : raw.dump();
            try {
                p.args = raw.is_string() ? json::parse(p.raw_args) : raw;
            } catch (const json::parse_error&) {
                p.error = "arguments are not valid JSON";
            }
            if (p.error.empty()) {
                const std::vector<ParamSpec>* params = nullptr;
                if (p.tool == "emit_chart")
                    params = &chart_params();
                else if (const auto* d = ctx.tools.find(p.tool))
                    params = &d->params;
                if (!params)
                    p.error = "unknown tool '" + p.tool + "'";
                else if (auto err = validate_args(*params, p.args))
                    p.error = *err;
                else if (p.tool == "emit_chart") {
                    try {
                        chart_from_json(p.args);
                    } catch (const UsageError& e) {
                        p.error = e.what();
                    }
                }
            }
            invalid = invalid || !p.error.empty();
            proposed.push_back(std::move(p));
        }

        if (!invalid) {
            PlannerAction a;
            for (auto& p : proposed)
                a.calls.push_back({p.id, p.tool, std::move(p.args)});
            return a;
        }

        std::string first_error;
        for (const auto& p : proposed)
            if (!p.error.empty()) {
                first_error = p.tool + ": " + p.error;
                break;
            }
        if (attempt == 1)
            throw PlannerError("model returned invalid tool arguments after a retry (" + first_error + ")");

        // Hand the problem back once so the model can correct itself.
        ordered_json calls = ordered_json::array();
        for (const auto& p : proposed)
            calls.push_back(assistant_call(p.id, p.tool, p.raw_args));
        body["messages"].push_back({{"role", "assistant"}, {"content", nullptr}, {"tool_calls", calls}});
        for (const auto& p : proposed)
            body["messages"].push_back(
                {{"role", "tool"},
                 {"tool_call_id", p.id},
                 {"content", p.error.empty()
                                 ? std::string("not executed: another call in this message was invalid")
                                 : "invalid arguments: " + p.error + ". Call the tool again with "
                                                                     "arguments that match its schema."}});
    }
}

} // namespace simagent
