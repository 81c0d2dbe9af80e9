// simagent command line: scaffold, validate, run and analyse scenarios, serve the API, chat.

#include "simagent/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace simagent;

namespace {

struct Globals {
    std::optional<std::string> data_root;
    std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
};

std::unique_ptr<Platform> open_platform(const Globals& g, std::size_t workers = 0)
{
    return std::make_unique<Platform>(
        PlatformOptions{resolve_data_root(g.data_root), workers ? workers : g.workers, {}});
}

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string show(const std::optional<double>& v)
{
    return v ? json(*v).dump() : "null";
}

void print_kpis(const KpiSummary& s)
{
    std::cout << "run " << s.run_id << " (" << s.scenario_id << "), " << s.replications()
              << " replication(s)\n";
    for (const auto& name : s.kpi_names()) {
        std::cout << "  " << std::left << std::setw(28) << name;
        if (s.replications() > 1) {
            auto it = std::find_if(s.aggregate.begin(), s.aggregate.end(),
                                   [&](const auto& kv) { return kv.first == name; });
            const KpiStats& st = it->second;
            std::cout << " mean " << show(st.mean) << "  std " << show(st.std) << "  p5 " << show(st.p5)
                      << "  p95 " << show(st.p95);
        } else {
            std::cout << " " << show(s.values_of(name).front());
        }
        std::cout << "\n";
    }
}

InputPatch parse_set(const std::string& text)
{
    // file.field[row]=value
    const auto eq = text.find('=');
    const auto dot = text.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
        throw UsageError("--set expects file.field[row]=value; got '" + text + "'");
    json patch;
    patch["file"] = text.substr(0, dot);
    std::string field = text.substr(dot + 1, eq - dot - 1);
    if (auto lb = field.find('['); lb != std::string::npos) {
        if (field.back() != ']')
            throw UsageError("unterminated row key in '" + text + "'");
        std::string row = field.substr(lb + 1, field.size() - lb - 2);
        field = field.substr(0, lb);
        bool digits = !row.empty() && std::all_of(row.begin(), row.end(), ::isdigit);
        patch["row"] = digits ? json(std::stoll(row)) : json(row);
    }
    patch["field"] = field;
    const std::string raw = text.substr(eq + 1);
    try {
        patch["value"] = json::parse(raw);
    } catch (const json::parse_error&) {
        patch["value"] = raw;
    }
    return patch_from_json(patch);
}

std::vector<std::string> split_list(const std::string& text)
{
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(item);
    return out;
}

void print_turn_event(const ApiEvent& e)
{
    if (e.type == "tool_call")
        std::cout << "  -> " << e.payload["tool"].get<std::string>() << " " << e.payload["arguments"].dump()
                  << "\n";
    else if (e.type == "tool_result") {
        std::string digest = e.payload["result"].dump();
        if (digest.size() > 160)
            digest = digest.substr(0, 157) + "...";
        std::cout << "  <- " << (e.payload["ok"].get<bool>() ? "ok " : "error ") << digest << "\n";
    } else if (e.type == "chart")
        std::cout << "  [chart] " << e.payload["chart_type"].get<std::string>() << ": "
                  << e.payload["title"].get<std::string>() << "\n";
    else if (e.type == "text")
        std::cout << e.payload["text"].get<std::string>() << "\n";
    else if (e.type == "error")
        std::cout << "error: " << e.payload["message"].get<std::string>() << "\n";
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"simagent - simulation scenarios, runs and analysis with a conversational agent"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--data-root", g.data_root, "data directory (default $SIMAGENT_DATA_ROOT or ./simagent-data)");

    int rc = 0;
    std::function<void()> action;

    // init
    auto* init = app.add_subcommand("init", "scaffold the baseline scenario");
    BaselineOptions base_opts;
    init->add_option("--agents", base_opts.agents, "population size")->check(CLI::PositiveNumber);
    init->add_option("--horizon", base_opts.horizon_hours, "horizon in hours")->check(CLI::PositiveNumber);
    init->add_option("--population-seed", base_opts.seed, "seed for the generated population");
    init->callback([&] {
        action = [&] {
            auto p = open_platform(g, 1);
            if (p->store().exists("baseline")) {
                std::cout << "baseline already exists in " << p->store().directory("baseline").string() << "\n";
                return;
            }
            p->store().create(make_baseline(base_opts));
            std::cout << "created baseline in " << p->store().directory("baseline").string() << "\n";
        };
    });

    // validate
    auto* val = app.add_subcommand("validate", "check a scenario against the input rules");
    std::string scenario;
    bool as_json = false;
    val->add_option("scenario", scenario)->required();
    val->add_flag("--json", as_json, "machine-readable output");
    val->callback([&] {
        action = [&] {
            auto p = open_platform(g, 1);
            ValidationReport r = validate(p->store().load(scenario));
            if (as_json)
                std::cout << to_json(r).dump(2) << "\n";
            else
                std::cout << (r.ok ? scenario + ": ok\n" : r.to_text());
            if (!r.ok)
                rc = 1;
        };
    });

    // run
    auto* run = app.add_subcommand("run", "run a scenario and wait for it");
    std::size_t reps = 1;
    std::uint64_t seed = 42;
    std::size_t parallel = 0;
    std::optional<std::string> label;
    run->add_option("scenario", scenario)->required();
    run->add_option("--reps", reps, "replications")->check(CLI::PositiveNumber);
    run->add_option("--seed", seed, "seed of replication 0");
    run->add_option("--parallel", parallel, "worker threads (default: all cores)")->check(CLI::PositiveNumber);
    run->add_option("--label", label, "run label");
    run->add_flag("--json", as_json, "print the run record as JSON");
    run->callback([&] {
        action = [&] {
            auto p = open_platform(g, parallel);
            const auto id = p->orchestrator().submit({scenario, reps, seed, label});
            RunRecord r = p->orchestrator().wait(id);
            if (as_json) {
                std::cout << to_json(r).dump(2) << "\n";
            } else {
                std::cout << r.run_id << " " << to_string(r.status) << " -> " << r.output_dir.string() << "\n";
                if (r.status == RunStatus::succeeded)
                    print_kpis(p->analyzer().load_kpis(id));
                else if (!r.failure.empty())
                    std::cout << r.failure << "\n";
            }
            if (r.status != RunStatus::succeeded)
                rc = 1;
        };
    });

    // kpi
    auto* kpi = app.add_subcommand("kpi", "KPI summary of a run");
    std::string run_id;
    kpi->add_option("run", run_id)->required();
    kpi->add_flag("--json", as_json, "print kpi_summary.json verbatim");
    kpi->callback([&] {
        action = [&] {
            auto p = open_platform(g, 1);
            KpiSummary s = p->analyzer().load_kpis(run_id);
            if (as_json)
                std::cout << read_file(p->orchestrator().run_directory(run_id) / "kpi_summary.json");
            else
                print_kpis(s);
        };
    });

    // compare
    auto* cmp = app.add_subcommand("compare", "KPI deltas between two runs (b - a)");
    std::string run_b;
    cmp->add_option("a", run_id)->required();
    cmp->add_option("b", run_b)->required();
    cmp->add_flag("--json", as_json, "machine-readable output");
    cmp->callback([&] {
        action = [&] {
            auto p = open_platform(g, 1);
            ComparisonReport r = p->analyzer().compare_runs(run_id, run_b);
            if (as_json) {
                std::cout << to_json(r).dump(2) << "\n";
                return;
            }
            std::cout << std::left << std::setw(28) << "kpi" << std::setw(16) << r.run_a << std::setw(16)
                      << r.run_b << std::setw(16) << "delta" << "pct_delta\n";
            for (const auto& e : r.entries)
                std::cout << std::setw(28) << e.kpi << std::setw(16) << show(e.value_a) << std::setw(16)
                          << show(e.value_b) << std::setw(16) << show(e.delta) << show(e.pct_delta) << "\n";
            for (const auto& n : r.notes)
                std::cout << "note: " << n << "\n";
        };
    });

    // drivers
    auto* drv = app.add_subcommand("drivers", "rank parameters by influence on a KPI");
    DriverRequest dreq;
    std::string params;
    drv->add_option("scenario", dreq.scenario_id)->required();
    drv->add_option("--kpi", dreq.kpi, "KPI to explain");
    drv->add_option("--params", params, "comma-separated global parameters (default: behavioural set)");
    drv->add_option("--delta-pct", dreq.delta_pct, "relative perturbation in percent");
    drv->add_option("--reps", dreq.replications, "replications per run")->check(CLI::PositiveNumber);
    drv->add_option("--seed", dreq.base_seed, "shared seed");
    drv->add_option("--parallel", parallel, "worker threads")->check(CLI::PositiveNumber);
    drv->add_flag("--json", as_json, "machine-readable output");
    drv->callback([&] {
        action = [&] {
            auto p = open_platform(g, parallel);
            dreq.parameters = params.empty() ? default_driver_parameters(p->store().load(dreq.scenario_id).globals)
                                             : split_list(params);
            DriverReport r = p->analyzer().rank_drivers(dreq);
            if (as_json) {
                std::cout << to_json(r).dump(2) << "\n";
                return;
            }
            std::cout << "drivers of " << r.kpi << " in " << r.scenario_id << " (+/-" << json(r.delta_pct).dump()
                      << "%, baseline " << json(r.kpi_baseline).dump() << ")\n";
            for (const auto& e : r.entries) {
                std::cout << "  " << std::left << std::setw(18) << e.parameter << " influence "
                          << json(e.influence).dump() << "  (up " << json(e.kpi_up).dump() << ", down "
                          << json(e.kpi_down).dump() << ")";
                if (!e.note.empty())
                    std::cout << "  " << e.note;
                std::cout << "\n";
            }
            for (const auto& n : r.notes)
                std::cout << "note: " << n << "\n";
        };
    });

    // derive
    auto* der = app.add_subcommand("derive", "create a scenario from another with patches");
    std::string new_name;
    std::vector<std::string> sets;
    der->add_option("base", scenario)->required();
    der->add_option("name", new_name)->required();
    der->add_option("--set", sets, "file.field[row]=value (repeatable)");
    der->callback([&] {
        action = [&] {
            auto p = open_platform(g, 1);
            std::vector<InputPatch> patches;
            for (const auto& s : sets)
                patches.push_back(parse_set(s));
            std::cout << p->store().derive(scenario, new_name, patches) << "\n";
        };
    });

    // scenarios / runs
    auto* scs = app.add_subcommand("scenarios", "list scenarios");
    scs->add_flag("--json", as_json, "machine-readable output");
    scs->callback([&] {
        action = [&] {
            auto p = open_platform(g, 1);
            ordered_json list = ordered_json::array();
            for (const auto& s : p->store().list()) {
                list.push_back({{"scenario_id", s.scenario_id}, {"name", s.name},
                                {"parent", s.parent ? ordered_json(*s.parent) : ordered_json(nullptr)}});
                if (!as_json)
                    std::cout << s.scenario_id << (s.parent ? "  (from " + *s.parent + ")" : "") << "\n";
            }
            if (as_json)
                std::cout << ordered_json{{"scenarios", list}}.dump(2) << "\n";
        };
    });

    auto* rns = app.add_subcommand("runs", "list runs, newest first");
    std::optional<std::string> filter_scenario;
    rns->add_option("--scenario", filter_scenario, "only runs of this scenario");
    rns->add_flag("--json", as_json, "machine-readable output");
    rns->callback([&] {
        action = [&] {
            auto p = open_platform(g, 1);
            ordered_json list = ordered_json::array();
            for (const auto& r : p->orchestrator().list_runs({filter_scenario, std::nullopt})) {
                list.push_back(to_json(r));
                if (!as_json)
                    std::cout << r.run_id << "  " << r.request.scenario_id << "  " << to_string(r.status)
                              << "  reps " << r.request.replications << "  seed " << r.request.base_seed << "\n";
            }
            if (as_json)
                std::cout << ordered_json{{"runs", list}}.dump(2) << "\n";
        };
    });

    // serve
    auto* srv = app.add_subcommand("serve", "HTTP/JSON API with server-sent events");
    ServiceConfig scfg;
    std::optional<std::string> llm_config;
    srv->add_option("--host", scfg.host, "listen address");
    srv->add_option("--port", scfg.port, "listen port");
    srv->add_option("--workers", scfg.workers, "simulation worker pool size")->check(CLI::PositiveNumber);
    srv->add_option("--planner", scfg.planner, "scripted or llm")->check(CLI::IsMember({"scripted", "llm"}));
    srv->add_option("--llm-config", llm_config, "JSON file with base_url, model, api_key_env");
    srv->add_option("--max-tool-calls", scfg.max_tool_calls, "tool calls per turn")->check(CLI::PositiveNumber);
    srv->callback([&] {
        action = [&] {
            scfg.data_root = resolve_data_root(g.data_root);
            if (llm_config)
                scfg.llm = load_llm_config(*llm_config);
            sigset_t set;
            sigemptyset(&set);
            sigaddset(&set, SIGINT);
            sigaddset(&set, SIGTERM);
            pthread_sigmask(SIG_BLOCK, &set, nullptr);
            Service service(scfg);
            service.start();
            std::cout << "listening on http://" << scfg.host << ":" << service.port() << " (data root "
                      << scfg.data_root.string() << ", planner " << scfg.planner << ")" << std::endl;
            int sig = 0;
            sigwait(&set, &sig);
            std::cout << "shutting down" << std::endl;
            service.stop();
        };
    });

    // chat
    auto* chat = app.add_subcommand("chat", "talk to the agent on stdin");
    std::string planner = "scripted";
    std::size_t max_calls = 8;
    chat->add_option("--planner", planner, "scripted or llm")->check(CLI::IsMember({"scripted", "llm"}));
    chat->add_option("--llm-config", llm_config, "JSON file with base_url, model, api_key_env");
    chat->add_option("--max-tool-calls", max_calls, "tool calls per turn")->check(CLI::PositiveNumber);
    chat->callback([&] {
        action = [&] {
            auto p = open_platform(g);
            std::optional<LlmConfig> llm;
            if (llm_config)
                llm = load_llm_config(*llm_config);
            Agent agent(p->tools(), p->sessions(), make_planner(planner, llm), {max_calls});
            const auto session = p->sessions().create();
            std::cout << "session " << session << " (" << planner << " planner); empty line or EOF quits\n";
            std::string line;
            while (std::cout << "> " << std::flush, std::getline(std::cin, line) && !line.empty())
                agent.handle_turn(session, line, print_turn_event);
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        action();
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}
