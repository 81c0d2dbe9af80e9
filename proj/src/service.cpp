#include "simagent/service.hpp"

#include <httplib.h>

#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace simagent {

namespace {

ordered_json scenario_json(const ScenarioConfig& c)
{
    ordered_json j;
    j["scenario_id"] = c.scenario_id;
    j["name"] = c.name;
    j["parent"] = c.parent ? ordered_json(*c.parent) : ordered_json(nullptr);
    j["fingerprint"] = fingerprint(c);
    j["global_params"] = ordered_json::parse(render_global_params(c.globals));
    j["population"] = ordered_json::array();
    for (const auto& p : c.population)
        j["population"].push_back({{"agent_id", p.agent_id}, {"digital_savviness", p.digital_savviness}});
    j["products"] = ordered_json::array();
    for (const auto& p : c.products)
        j["products"].push_back({{"product_id", p.product_id},
                                 {"name", p.name},
                                 {"price", p.price},
                                 {"quality", p.quality},
                                 {"digital_channel", p.digital_channel ? 1 : 0}});
    j["events"] = ordered_json::array();
    for (const auto& e : c.events)
        j["events"].push_back({{"hour", e.hour}, {"target", e.target}, {"field", e.field}, {"value", e.value}});
    j["patch_history"] = ordered_json::array();
    for (const auto& p : c.patch_history)
        j["patch_history"].push_back(to_json(p));
    return j;
}

void send(httplib::Response& res, int status, const ordered_json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

ordered_json error_body(const std::string& message)
{
    return {{"error", message}};
}

// Maps domain errors onto status codes.
template <typename F>
void guarded(httplib::Response& res, F&& fn)
{
    try {
        fn();
    } catch (const ValidationError& e) {
        ordered_json body = error_body(e.what());
        body["report"] = to_json(e.report());
        send(res, 422, body);
    } catch (const NotFoundError& e) {
        send(res, 404, error_body(e.what()));
    } catch (const ConflictError& e) {
        send(res, 409, error_body(e.what()));
    } catch (const UsageError& e) {
        send(res, 400, error_body(e.what()));
    } catch (const json::exception& e) {
        send(res, 400, error_body(std::string("bad request body: ") + e.what()));
    } catch (const std::exception& e) {
        send(res, 500, error_body(e.what()));
    }
}

json body_of(const httplib::Request& req)
{
    if (req.body.empty())
        return json::object();
    json j = json::parse(req.body);
    if (!j.is_object())
        throw UsageError("request body must be a JSON object");
    return j;
}

std::optional<std::string> query(const httplib::Request& req, const char* key)
{
    if (!req.has_param(key))
        return std::nullopt;
    return req.get_param_value(key);
}

std::int64_t to_int(const std::string& text, const char* what)
{
    std::size_t used = 0;
    std::int64_t v = 0;
    try {
        v = std::stoll(text, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != text.size() || text.empty())
        throw UsageError(std::string(what) + " must be an integer; got '" + text + "'");
    return v;
}

std::string sse(const ApiEvent& e)
{
    return "event: " + e.type + "\ndata: " + e.payload.dump() + "\n\n";
}

} // namespace

Service::Service(ServiceConfig config)
    : config_(std::move(config)),
      platform_(PlatformOptions{config_.data_root, config_.workers, {}}),
      server_(std::make_unique<httplib::Server>())
{
    if (config_.workers < 1)
        throw ConfigError("worker pool size must be at least 1");
    // httplib defaults to SO_REUSEPORT, which would let a second server share a busy port.
    server_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    });
    agent_ = std::make_unique<Agent>(platform_.tools(), platform_.sessions(),
                                     make_planner(config_.planner, config_.llm),
                                     AgentOptions{config_.max_tool_calls});
    routes();
}

Service::~Service()
{
    stop();
}

void Service::start()
{
    if (config_.port == 0) {
        port_ = server_->bind_to_any_port(config_.host);
        if (port_ < 0)
            throw Error("cannot bind " + config_.host + " on any port");
    } else {
        if (!server_->bind_to_port(config_.host, config_.port))
            throw Error("cannot listen on " + config_.host + ":" + std::to_string(config_.port) +
                        " (port " + std::to_string(config_.port) + " is in use or not permitted)");
        port_ = config_.port;
    }
    listener_ = std::thread([this] { server_->listen_after_bind(); });
}

void Service::stop()
{
    if (stopped_)
        return;
    stopped_ = true;
    // Cancel queued work first so turns blocked on a run can finish, then drain the server.
    platform_.orchestrator().shutdown();
    server_->stop();
    if (listener_.joinable())
        listener_.join();
}

void Service::routes()
{
    auto& srv = *server_;
    auto& store = platform_.store();
    auto& orch = platform_.orchestrator();
    auto& analyzer = platform_.analyzer();

    srv.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
        send(res, 200, {{"status", "ok"}});
    });

    srv.Post("/api/sessions", [this](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] { send(res, 201, {{"session_id", platform_.sessions().create()}}); });
    });

    srv.Get(R"(/api/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send(res, 200, to_json(platform_.sessions().snapshot(req.matches[1].str()))); });
    });

    srv.Post(R"(/api/sessions/([^/]+)/messages)", [this](const httplib::Request& req,
                                                           httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1].str();
            if (!platform_.sessions().exists(id))
                throw NotFoundError("unknown session '" + id + "'");
            json body = body_of(req);
            const json text = body.contains("text") ? body["text"] : body.value("message", json());
            if (!text.is_string())
                throw UsageError("message body needs a string 'text'");
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "text/event-stream",
                [this, id, message = text.get<std::string>()](std::size_t, httplib::DataSink& sink) {
                    auto write = [&](const ApiEvent& e) {
                        const std::string chunk = sse(e);
                        sink.write(chunk.data(), chunk.size());
                    };
                    try {
                        agent_->handle_turn(id, message, write);
                    } catch (const std::exception& e) {
                        write({"error", {{"message", e.what()}}});
                        write({"done", {{"error", true}}});
                    }
                    sink.done();
                    return true;
                });
        });
    });

    srv.Get("/api/scenarios", [&store](const httplib::Request&, httplib::Response& res) {
        guarded(res, [&] {
            ordered_json list = ordered_json::array();
            for (const auto& s : store.list())
                list.push_back({{"scenario_id", s.scenario_id},
                                {"name", s.name},
                                {"parent", s.parent ? ordered_json(*s.parent) : ordered_json(nullptr)}});
            send(res, 200, {{"scenarios", list}});
        });
    });

    srv.Get(R"(/api/scenarios/([^/]+))", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send(res, 200, scenario_json(store.load(req.matches[1].str()))); });
    });

    srv.Get(R"(/api/scenarios/([^/]+)/fields)", [&store](const httplib::Request& req,
                                                          httplib::Response& res) {
        guarded(res, [&] {
            if (!store.exists(req.matches[1].str()))
                throw NotFoundError("unknown scenario '" + req.matches[1].str() + "'");
            ordered_json fields = ordered_json::array();
            for (const auto& d : all_field_docs())
                fields.push_back(to_json(d));
            send(res, 200, {{"scenario_id", req.matches[1].str()}, {"fields", fields}});
        });
    });

    srv.Post("/api/scenarios", [&store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            json body = body_of(req);
            if (!body.contains("base_id") || !body["base_id"].is_string() || !body.contains("name") ||
                !body["name"].is_string())
                throw UsageError("body needs string 'base_id' and 'name'");
            std::vector<InputPatch> patches;
            for (const auto& p : body.value("patches", json::array()))
                patches.push_back(patch_from_json(p));
            const auto id = store.derive(body["base_id"].get<std::string>(), body["name"].get<std::string>(),
                                         patches);
            send(res, 201, scenario_json(store.load(id)));
        });
    });

    srv.Post("/api/runs", [&orch](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            json body = body_of(req);
            if (!body.contains("scenario_id") || !body["scenario_id"].is_string())
                throw UsageError("body needs a string 'scenario_id'");
            RunRequest r;
            r.scenario_id = body["scenario_id"].get<std::string>();
            const auto reps = body.value("replications", std::int64_t{1});
            const auto seed = body.value("base_seed", std::int64_t{42});
            if (reps < 1 || seed < 0)
                throw UsageError("replications must be at least 1 and base_seed non-negative");
            r.replications = static_cast<std::size_t>(reps);
            r.base_seed = static_cast<std::uint64_t>(seed);
            if (body.contains("label"))
                r.label = body["label"].get<std::string>();
            const auto id = orch.submit(r);
            send(res, 202, to_json(orch.status(id)));
        });
    });

    srv.Get("/api/runs", [&orch](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            RunFilter f;
            f.scenario_id = query(req, "scenario_id");
            if (auto s = query(req, "status")) {
                f.status = parse_run_status(*s);
                if (!f.status)
                    throw UsageError("unknown status '" + *s + "'");
            }
            ordered_json list = ordered_json::array();
            for (const auto& r : orch.list_runs(f))
                list.push_back(to_json(r));
            send(res, 200, {{"runs", list}});
        });
    });

    srv.Get(R"(/api/runs/([^/]+))", [&orch](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send(res, 200, to_json(orch.status(req.matches[1].str()))); });
    });

    srv.Delete(R"(/api/runs/([^/]+))", [&orch](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send(res, 200, to_json(orch.cancel(req.matches[1].str()))); });
    });

    srv.Get(R"(/api/runs/([^/]+)/kpis)", [&analyzer, &orch](const httplib::Request& req,
                                                              httplib::Response& res) {
        guarded(res, [&] {
            const std::string id = req.matches[1].str();
            analyzer.load_kpis(id); // computes the file when it is missing
            std::ifstream in(orch.run_directory(id) / "kpi_summary.json", std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            res.status = 200;
            res.set_content(ss.str(), "application/json");
        });
    });

    srv.Get(R"(/api/runs/([^/]+)/series)", [&analyzer](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            SeriesQuery q;
            q.metric = query(req, "metric").value_or("cumulative_adopters");
            q.product = query(req, "product");
            if (auto r = query(req, "replication")) {
                const auto k = to_int(*r, "replication");
                if (k < 0)
                    throw UsageError("replication must be non-negative");
                q.replication = static_cast<std::size_t>(k);
            }
            if (auto w = query(req, "window")) {
                const auto comma = w->find(',');
                if (comma == std::string::npos)
                    throw UsageError("window must be 't0,t1'");
                q.window = {{to_int(w->substr(0, comma), "window start"),
                             to_int(w->substr(comma + 1), "window end")}};
            }
            if (auto d = query(req, "downsample")) {
                auto mode = parse_downsample(*d);
                if (!mode)
                    throw UsageError("downsample must be none, daily-mean or weekly-mean");
                q.downsample = *mode;
            }
            send(res, 200, to_json(analyzer.query_series(req.matches[1].str(), q)));
        });
    });

    srv.Get(R"(/api/runs/([^/]+)/bands)", [&analyzer](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            send(res, 200,
                 to_json(analyzer.aggregate_replications(
                     req.matches[1].str(), query(req, "metric").value_or("cumulative_adopters"),
                     query(req, "product"))));
        });
    });

    srv.Get(R"(/api/runs/([^/]+)/compare/([^/]+))", [&analyzer](const httplib::Request& req,
                                                                  httplib::Response& res) {
        guarded(res, [&] {
            send(res, 200, to_json(analyzer.compare_runs(req.matches[1].str(), req.matches[2].str())));
        });
    });

    srv.Post("/api/drivers", [&analyzer, &store](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            json body = body_of(req);
            if (!body.contains("scenario_id") || !body["scenario_id"].is_string())
                throw UsageError("body needs a string 'scenario_id'");
            DriverRequest d;
            d.scenario_id = body["scenario_id"].get<std::string>();
            d.kpi = body.value("kpi", d.kpi);
            if (body.contains("params"))
                d.parameters = body["params"].get<std::vector<std::string>>();
            else
                d.parameters = default_driver_parameters(store.load(d.scenario_id).globals);
            d.delta_pct = body.value("delta_pct", d.delta_pct);
            const auto reps = body.value("replications", std::int64_t{1});
            const auto seed = body.value("base_seed", std::int64_t{42});
            if (reps < 1 || seed < 0)
                throw UsageError("replications must be at least 1 and base_seed non-negative");
            d.replications = static_cast<std::size_t>(reps);
            d.base_seed = static_cast<std::uint64_t>(seed);
            send(res, 200, to_json(analyzer.rank_drivers(d)));
        });
    });

    srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (res.body.empty())
            send(res, res.status, error_body("no such endpoint"));
    });
}

} // namespace simagent
