#include "simagent/tools.hpp"

#include <algorithm>
#include <set>

using nlohmann::json;
using nlohmann::ordered_json;

namespace simagent {

std::string_view to_string(ParamType type)
{
    switch (type) {
    case ParamType::string: return "string";
    case ParamType::integer: return "integer";
    case ParamType::number: return "number";
    case ParamType::boolean: return "boolean";
    case ParamType::array: return "array";
    case ParamType::object: return "object";
    }
    return "string";
}

namespace {

bool has_type(const json& v, ParamType t)
{
    switch (t) {
    case ParamType::string: return v.is_string();
    case ParamType::integer: return v.is_number_integer();
    case ParamType::number: return v.is_number();
    case ParamType::boolean: return v.is_boolean();
    case ParamType::array: return v.is_array();
    case ParamType::object: return v.is_object();
    }
    return false;
}

} // namespace

ordered_json parameter_schema(const std::vector<ParamSpec>& params)
{
    ordered_json props = ordered_json::object();
    ordered_json required = ordered_json::array();
    for (const auto& p : params) {
        ordered_json s;
        s["type"] = std::string(to_string(p.type));
        if (!p.description.empty())
            s["description"] = p.description;
        if (!p.allowed.empty())
            s["enum"] = p.allowed;
        if (p.items)
            s["items"] = {{"type", std::string(to_string(*p.items))}};
        props[p.name] = std::move(s);
        if (p.required)
            required.push_back(p.name);
    }
    ordered_json schema;
    schema["type"] = "object";
    schema["properties"] = std::move(props);
    schema["required"] = std::move(required);
    schema["additionalProperties"] = false;
    return schema;
}

std::optional<std::string> validate_args(const std::vector<ParamSpec>& params, const json& args)
{
    if (!args.is_object())
        return "arguments must be a JSON object";
    for (const auto& [key, value] : args.items()) {
        auto it = std::find_if(params.begin(), params.end(),
                               [&](const ParamSpec& p) { return p.name == key; });
        if (it == params.end())
            return "unknown argument '" + key + "'";
        if (!has_type(value, it->type))
            return "argument '" + key + "' must be of type " + std::string(to_string(it->type));
        if (!it->allowed.empty() &&
            std::find(it->allowed.begin(), it->allowed.end(), value) == it->allowed.end()) {
            std::string list;
            for (const auto& a : it->allowed)
                list += (list.empty() ? "" : ", ") + a.dump();
            return "argument '" + key + "' must be one of {" + list + "}; got " + value.dump();
        }
        if (it->items) {
            for (const auto& el : value)
                if (!has_type(el, *it->items))
                    return "elements of '" + key + "' must be of type " +
                           std::string(to_string(*it->items));
        }
    }
    for (const auto& p : params)
        if (p.required && !args.contains(p.name))
            return "missing required argument '" + p.name + "'";
    return std::nullopt;
}

void ToolRegistry::register_tool(ToolDescriptor d)
{
    if (d.name.empty())
        throw ConfigError("tool name must not be empty");
    if (find(d.name))
        throw ConflictError("duplicate tool name '" + d.name + "'");
    if (d.description.empty())
        throw ConfigError("tool '" + d.name + "' needs a description");
    if (!d.binding)
        throw ConfigError("tool '" + d.name + "' has no binding");
    std::set<std::string> declared;
    for (const auto& p : d.params)
        if (!declared.insert(p.name).second)
            throw ConfigError("tool '" + d.name + "' declares parameter '" + p.name + "' twice");
    std::set<std::string> bound(d.bound_params.begin(), d.bound_params.end());
    for (const auto& b : bound)
        if (!declared.count(b))
            throw ConfigError("tool '" + d.name + "' binding reads undeclared parameter '" + b + "'");
    for (const auto& p : declared)
        if (!bound.count(p))
            throw ConfigError("tool '" + d.name + "' declares parameter '" + p +
                              "' that its binding never reads");
    tools_.push_back(std::move(d));
}

const ToolDescriptor* ToolRegistry::find(std::string_view name) const
{
    for (const auto& t : tools_)
        if (t.name == name)
            return &t;
    return nullptr;
}

std::vector<std::string> ToolRegistry::names() const
{
    std::vector<std::string> out;
    for (const auto& t : tools_)
        out.push_back(t.name);
    return out;
}

ordered_json ToolRegistry::invoke(std::string_view name, const json& args) const
{
    const ToolDescriptor* d = find(name);
    if (!d)
        throw UsageError("unknown tool '" + std::string(name) + "'");
    if (auto err = validate_args(d->params, args))
        throw UsageError(d->name + ": " + *err);
    return d->binding(args);
}

ordered_json run_digest(const RunRecord& r)
{
    ordered_json j;
    j["run_id"] = r.run_id;
    j["scenario_id"] = r.request.scenario_id;
    j["status"] = std::string(to_string(r.status));
    j["replications"] = r.request.replications;
    j["base_seed"] = r.request.base_seed;
    j["fingerprint"] = r.fingerprint;
    j["completed_replications"] = r.completed_replications;
    if (r.request.label)
        j["label"] = *r.request.label;
    if (!r.failure.empty())
        j["failure"] = r.failure;
    return j;
}

std::vector<std::string> default_driver_parameters(const GlobalParams& g)
{
    std::vector<std::string> out{"activation_prob", "beta_digital", "beta_price",
                                 "beta_quality",    "beta_social",  "u_no_purchase"};
    if (g.choice_function == 2)
        out.push_back("temperature");
    if (g.choice_function == 3)
        out.push_back("epsilon");
    return out;
}

namespace {

std::string kpi_context()
{
    return "KPIs: final_adoption_rate (adopters / population at the last hour), total_revenue "
           "(sum of revenue.csv), time_to_threshold_hour (first hour with cumulative adopters >= "
           "kpi_threshold_pct * population / 100, null if never), market_share.<product_id> "
           "(product adopters / population at the last hour).";
}

ParamSpec str(std::string name, bool required, std::string description,
              std::vector<json> allowed = {})
{
    return {std::move(name), ParamType::string, required, std::move(description), std::move(allowed), {}};
}

ParamSpec integer(std::string name, bool required, std::string description)
{
    return {std::move(name), ParamType::integer, required, std::move(description), {}, {}};
}

std::vector<json> metric_values()
{
    return {"new_adopters", "cumulative_adopters", "market_share", "revenue"};
}

} // namespace

void register_builtin_tools(ToolRegistry& registry, ScenarioStore& store, Orchestrator& orchestrator,
                            Analyzer& analyzer)
{
    registry.register_tool({
        "run_simulation",
        "Run the adoption simulation for a scenario and wait for it to finish. Replication k uses "
        "seed base_seed + k. Returns the run and its KPI summary. " + kpi_context(),
        {str("scenario_id", true, "scenario to run"),
         integer("replications", false, "Monte Carlo replications (default 1)"),
         integer("base_seed", false, "seed of replication 0 (default 42)"),
         str("label", false, "free-form run label")},
        {"scenario_id", "replications", "base_seed", "label"},
        [&](const json& a) {
            RunRequest req;
            req.scenario_id = a["scenario_id"].get<std::string>();
            const auto reps = a.value("replications", std::int64_t{1});
            if (reps < 1)
                throw UsageError("replications must be at least 1");
            req.replications = static_cast<std::size_t>(reps);
            const auto seed = a.value("base_seed", std::int64_t{42});
            if (seed < 0)
                throw UsageError("base_seed must be non-negative");
            req.base_seed = static_cast<std::uint64_t>(seed);
            if (a.contains("label"))
                req.label = a["label"].get<std::string>();
            const auto id = orchestrator.submit(req);
            RunRecord r = orchestrator.wait(id);
            if (r.status != RunStatus::succeeded)
                throw Error("run " + id + " ended " + std::string(to_string(r.status)) +
                            (r.failure.empty() ? "" : ": " + r.failure));
            ordered_json out;
            out["run"] = run_digest(r);
            out["kpis"] = to_json(analyzer.load_kpis(id));
            return out;
        },
    });

    registry.register_tool({
        "modify_inputs",
        "Change scenario inputs. With 'name', derives a new scenario from base_id with the patches "
        "applied (all or nothing); without it, patches base_id in place. Each patch is "
        "{file, row, field, value}: file is global_params, population, products or events; row is "
        "the agent_id, product_id or 0-based event index (omit for global_params). Rows can be "
        "added with {file, op:\"append\", value:{...}} and removed with {file, op:\"delete\", row}.",
        {str("base_id", true, "scenario to start from"),
         str("name", false, "name of the derived scenario"),
         {"patches", ParamType::array, true, "list of patches", {}, ParamType::object}},
        {"base_id", "name", "patches"},
        [&](const json& a) {
            const auto base = a["base_id"].get<std::string>();
            std::vector<InputPatch> patches;
            for (const auto& p : a["patches"])
                patches.push_back(patch_from_json(p));
            if (patches.empty())
                throw UsageError("patches must not be empty");
            ordered_json out;
            ordered_json applied = ordered_json::array();
            for (const auto& p : patches)
                applied.push_back(to_json(p));
            if (a.contains("name")) {
                const auto id = store.derive(base, a["name"].get<std::string>(), patches);
                out["scenario_id"] = id;
                out["name"] = a["name"];
                out["parent"] = base;
            } else {
                for (const auto& p : patches) {
                    ValidationReport report = store.apply_patch(base, p);
                    if (!report.ok)
                        throw ValidationError("patch rejected:\n" + report.to_text(), report);
                }
                out["scenario_id"] = base;
            }
            out["patches"] = std::move(applied);
            out["fingerprint"] = fingerprint(store.load(out["scenario_id"].get<std::string>()));
            return out;
        },
    });

    registry.register_tool({
        "summarize_kpis",
        "KPI summary of a finished run: per-replication values and, with more than one "
        "replication, mean/std/p5/p95 across replications. " + kpi_context(),
        {str("run_id", true, "run to summarize")},
        {"run_id"},
        [&](const json& a) { return to_json(analyzer.load_kpis(a["run_id"].get<std::string>())); },
    });

    registry.register_tool({
        "query_series",
        "Hourly series of one replication of a run, per product. Optional inclusive hour window "
        "[t0, t1] and daily/weekly block means.",
        {str("run_id", true, "run to read"),
         str("metric", true, "series to read", metric_values()),
         str("product", false, "restrict to one product_id"),
         integer("replication", false, "replication index (default 0)"),
         {"window", ParamType::array, false, "inclusive [t0, t1] hour window", {}, ParamType::integer},
         str("downsample", false, "block averaging", {"none", "daily-mean", "weekly-mean"})},
        {"run_id", "metric", "product", "replication", "window", "downsample"},
        [&](const json& a) {
            SeriesQuery q;
            q.metric = a["metric"].get<std::string>();
            if (a.contains("product"))
                q.product = a["product"].get<std::string>();
            if (a.contains("replication")) {
                if (a["replication"].get<std::int64_t>() < 0)
                    throw UsageError("replication must be non-negative");
                q.replication = a["replication"].get<std::size_t>();
            }
            if (a.contains("window")) {
                if (a["window"].size() != 2)
                    throw UsageError("window must be [t0, t1]");
                q.window = {{a["window"][0].get<std::int64_t>(), a["window"][1].get<std::int64_t>()}};
            }
            if (a.contains("downsample"))
                q.downsample = *parse_downsample(a["downsample"].get<std::string>());
            return to_json(analyzer.query_series(a["run_id"].get<std::string>(), q));
        },
    });

    registry.register_tool({
        "compare_runs",
        "Compare the KPIs of two finished runs. delta = b - a, pct_delta = delta / |a| * 100 "
        "(null when a is 0); rows sorted by |pct_delta|. With 'kpi', that row is also returned "
        "as 'focus'. " + kpi_context(),
        {str("run_a", true, "reference run"), str("run_b", true, "comparison run"),
         str("kpi", false, "KPI to single out")},
        {"run_a", "run_b", "kpi"},
        [&](const json& a) {
            auto report = analyzer.compare_runs(a["run_a"].get<std::string>(), a["run_b"].get<std::string>());
            ordered_json out = to_json(report);
            if (a.contains("kpi")) {
                const auto kpi = a["kpi"].get<std::string>();
                auto it = std::find_if(report.entries.begin(), report.entries.end(),
                                       [&](const KpiDelta& d) { return d.kpi == kpi; });
                if (it == report.entries.end())
                    throw UsageError("kpi '" + kpi + "' is not shared by both runs");
                out["focus"] = out["kpis"][static_cast<std::size_t>(it - report.entries.begin())];
            }
            return out;
        },
    });

    registry.register_tool({
        "rank_drivers",
        "Rank global parameters by their influence on a KPI: each parameter is moved by "
        "+/- delta_pct percent (clamped to its valid range) and re-run with the same seeds; "
        "influence = max |KPI change|. Defaults: kpi total_revenue, delta_pct 10, the behavioural "
        "coefficients plus activation_prob. " + kpi_context(),
        {str("scenario_id", true, "scenario to analyse"),
         str("kpi", false, "KPI to explain (default total_revenue)"),
         {"parameters", ParamType::array, false, "global parameters to perturb", {}, ParamType::string},
         {"delta_pct", ParamType::number, false, "relative perturbation in percent", {}, {}},
         integer("replications", false, "replications per run (default 1)"),
         integer("base_seed", false, "shared seed (default 42)")},
        {"scenario_id", "kpi", "parameters", "delta_pct", "replications", "base_seed"},
        [&](const json& a) {
            DriverRequest req;
            req.scenario_id = a["scenario_id"].get<std::string>();
            req.kpi = a.value("kpi", req.kpi);
            if (a.contains("parameters"))
                req.parameters = a["parameters"].get<std::vector<std::string>>();
            else
                req.parameters = default_driver_parameters(store.load(req.scenario_id).globals);
            req.delta_pct = a.value("delta_pct", req.delta_pct);
            const auto reps = a.value("replications", std::int64_t{1});
            const auto seed = a.value("base_seed", std::int64_t{42});
            if (reps < 1 || seed < 0)
                throw UsageError("replications must be at least 1 and base_seed non-negative");
            req.replications = static_cast<std::size_t>(reps);
            req.base_seed = static_cast<std::uint64_t>(seed);
            return to_json(analyzer.rank_drivers(req));
        },
    });

    registry.register_tool({
        "list_scenarios",
        "List stored scenarios with their parent scenario.",
        {},
        {},
        [&](const json&) {
            ordered_json list = ordered_json::array();
            for (const auto& s : store.list())
                list.push_back({{"scenario_id", s.scenario_id},
                                {"name", s.name},
                                {"parent", s.parent ? ordered_json(*s.parent) : ordered_json(nullptr)}});
            return ordered_json{{"scenarios", list}};
        },
    });

    registry.register_tool({
        "list_runs",
        "List runs, newest first, optionally filtered by scenario or status.",
        {str("scenario_id", false, "only runs of this scenario"),
         str("status", false, "only runs in this state",
             {"queued", "running", "succeeded", "failed", "cancelled"})},
        {"scenario_id", "status"},
        [&](const json& a) {
            RunFilter f;
            if (a.contains("scenario_id"))
                f.scenario_id = a["scenario_id"].get<std::string>();
            if (a.contains("status"))
                f.status = parse_run_status(a["status"].get<std::string>());
            ordered_json list = ordered_json::array();
            for (const auto& r : orchestrator.list_runs(f))
                list.push_back(run_digest(r));
            return ordered_json{{"runs", list}};
        },
    });

    registry.register_tool({
        "describe_field",
        "Meaning, type, valid range and example of an input field. Without 'file', the first "
        "file defining the field is used.",
        {str("field", true, "field or column name"),
         str("file", false, "input file", {"global_params", "population", "products", "events"})},
        {"field", "file"},
        [&](const json& a) {
            const auto field = a["field"].get<std::string>();
            if (a.contains("file"))
                return to_json(describe_field(*parse_input_file(a["file"].get<std::string>()), field));
            for (auto file : {InputFile::global_params, InputFile::population, InputFile::products,
                              InputFile::events}) {
                if (find_field(file, field))
                    return to_json(describe_field(file, field));
            }
            std::set<std::string> names;
            for (const auto& s : field_specs())
                names.insert(s.name);
            std::string known;
            for (const auto& n : names)
                known += (known.empty() ? "" : ", ") + n;
            throw NotFoundError("no input field named '" + field + "'; documented fields: " + known);
        },
    });
}

} // namespace simagent
