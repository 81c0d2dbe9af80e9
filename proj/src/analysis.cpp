#include "simagent/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace simagent {

std::string_view to_string(Downsample mode)
{
    switch (mode) {
    case Downsample::none: return "none";
    case Downsample::daily_mean: return "daily-mean";
    case Downsample::weekly_mean: return "weekly-mean";
    }
    return "none";
}

std::optional<Downsample> parse_downsample(std::string_view text)
{
    for (auto m : {Downsample::none, Downsample::daily_mean, Downsample::weekly_mean})
        if (text == to_string(m))
            return m;
    return std::nullopt;
}

namespace {

ordered_json optional_number(const std::optional<double>& v)
{
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

const std::set<std::string, std::less<>> kMetrics{"new_adopters", "cumulative_adopters",
                                                   "market_share", "revenue"};

void require_metric(std::string_view metric)
{
    if (!kMetrics.count(metric))
        throw UsageError("unknown metric '" + std::string(metric) +
                         "' (expected new_adopters, cumulative_adopters, market_share or revenue)");
}

} // namespace

std::vector<double> slice_series(const std::vector<double>& series, std::int64_t t0, std::int64_t t1,
                                 Downsample mode, std::vector<std::int64_t>& hours)
{
    hours.clear();
    std::vector<double> out;
    const std::int64_t block = mode == Downsample::daily_mean ? 24 : mode == Downsample::weekly_mean ? 168 : 1;
    for (std::int64_t start = t0; start <= t1; start += block) {
        const std::int64_t end = std::min(t1, start + block - 1);
        double sum = 0.0;
        for (std::int64_t t = start; t <= end; ++t)
            sum += series[static_cast<std::size_t>(t)];
        out.push_back(block == 1 ? sum : sum / static_cast<double>(end - start + 1));
        hours.push_back(start);
    }
    return out;
}

ordered_json to_json(const TimeSeriesFrame& f)
{
    ordered_json j;
    j["run_id"] = f.run_id;
    j["replication"] = f.replication;
    j["metric"] = f.metric;
    j["downsample"] = std::string(to_string(f.downsample));
    j["hours"] = f.hours;
    j["series"] = ordered_json::object();
    for (std::size_t p = 0; p < f.product_ids.size(); ++p)
        j["series"][f.product_ids[p]] = f.values[p];
    return j;
}

ordered_json to_json(const ReplicationBands& b)
{
    ordered_json j;
    j["run_id"] = b.run_id;
    j["metric"] = b.metric;
    j["replications"] = b.replications;
    j["products"] = ordered_json::object();
    for (const auto& s : b.products)
        j["products"][s.product_id] = {{"mean", s.mean}, {"std", s.std}, {"p5", s.p5}, {"p95", s.p95}};
    return j;
}

ordered_json to_json(const ComparisonReport& r)
{
    ordered_json j;
    j["run_a"] = r.run_a;
    j["run_b"] = r.run_b;
    j["kpis"] = ordered_json::array();
    for (const auto& e : r.entries)
        j["kpis"].push_back({{"kpi", e.kpi},
                             {"value_a", optional_number(e.value_a)},
                             {"value_b", optional_number(e.value_b)},
                             {"delta", optional_number(e.delta)},
                             {"pct_delta", optional_number(e.pct_delta)}});
    j["notes"] = r.notes;
    return j;
}

ordered_json to_json(const DriverReport& r)
{
    ordered_json j;
    j["scenario_id"] = r.scenario_id;
    j["kpi"] = r.kpi;
    j["delta_pct"] = r.delta_pct;
    j["baseline_run_id"] = r.baseline_run_id;
    j["kpi_baseline"] = r.kpi_baseline;
    j["drivers"] = ordered_json::array();
    for (const auto& e : r.entries) {
        ordered_json d;
        d["parameter"] = e.parameter;
        d["base_value"] = e.base_value;
        d["up_value"] = e.up_value;
        d["down_value"] = e.down_value;
        d["kpi_base"] = e.kpi_base;
        d["kpi_up"] = e.kpi_up;
        d["kpi_down"] = e.kpi_down;
        d["influence"] = e.influence;
        d["up_run_id"] = e.up_run_id;
        d["down_run_id"] = e.down_run_id;
        if (!e.note.empty())
            d["note"] = e.note;
        j["drivers"].push_back(std::move(d));
    }
    j["notes"] = r.notes;
    return j;
}

ComparisonReport compare_summaries(const KpiSummary& a, const KpiSummary& b)
{
    ComparisonReport report;
    report.run_a = a.run_id;
    report.run_b = b.run_id;

    const auto names_b = b.kpi_names();
    std::vector<std::string> names;
    for (const auto& n : a.kpi_names())
        if (std::find(names_b.begin(), names_b.end(), n) != names_b.end())
            names.push_back(n);
    if (names.size() != a.kpi_names().size() || names.size() != names_b.size()) {
        std::string shared;
        for (const auto& n : names)
            if (n.rfind("market_share.", 0) == 0)
                shared += (shared.empty() ? "" : ", ") + n.substr(13);
        report.notes.push_back("product sets differ; market_share compared on the intersection: " +
                               (shared.empty() ? std::string("none") : shared));
    }

    for (const auto& n : names) {
        KpiDelta d;
        d.kpi = n;
        d.value_a = a.mean_of(n);
        d.value_b = b.mean_of(n);
        if (d.value_a && d.value_b) {
            d.delta = *d.value_b - *d.value_a;
            if (*d.value_a != 0.0)
                d.pct_delta = *d.delta / std::fabs(*d.value_a) * 100.0;
        }
        report.entries.push_back(std::move(d));
    }
    std::stable_sort(report.entries.begin(), report.entries.end(),
                     [](const KpiDelta& x, const KpiDelta& y) {
                         if (x.pct_delta.has_value() != y.pct_delta.has_value())
                             return x.pct_delta.has_value();
                         if (!x.pct_delta)
                             return false;
                         return std::fabs(*x.pct_delta) > std::fabs(*y.pct_delta);
                     });
    return report;
}

Analyzer::Analyzer(ScenarioStore& store, Orchestrator& orchestrator)
    : store_(store), orchestrator_(orchestrator)
{
}

RunRecord Analyzer::readable_run(std::string_view run_id) const
{
    RunRecord r = orchestrator_.status(run_id);
    const bool readable = r.status == RunStatus::succeeded ||
                          (r.status == RunStatus::cancelled && !r.completed_replications.empty());
    if (!readable)
        throw NotFoundError("run " + r.run_id + " has no outputs (status " +
                            std::string(to_string(r.status)) + ")");
    return r;
}

KpiSummary Analyzer::summarize_kpis(std::string_view run_id)
{
    RunRecord r = readable_run(run_id);
    std::vector<ReplicationData> reps;
    for (auto k : r.completed_replications)
        reps.push_back(read_replication(r.output_dir / ("rep_" + std::to_string(k))));
    KpiSummary summary = summarize(r.run_id, r.request.scenario_id, reps);
    const auto path = r.output_dir / "kpi_summary.json";
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << render_kpi_summary(summary);
    if (!out)
        throw IoError("cannot write " + path.string());
    return summary;
}

KpiSummary Analyzer::load_kpis(std::string_view run_id)
{
    RunRecord r = readable_run(run_id);
    const auto path = r.output_dir / "kpi_summary.json";
    std::ifstream in(path, std::ios::binary);
    if (!in)
        return summarize_kpis(run_id);
    std::ostringstream ss;
    ss << in.rdbuf();
    return kpi_summary_from_json(ordered_json::parse(ss.str()));
}

TimeSeriesFrame Analyzer::query_series(std::string_view run_id, const SeriesQuery& q)
{
    require_metric(q.metric);
    RunRecord r = readable_run(run_id);
    const std::size_t rep = q.replication.value_or(0);
    if (std::find(r.completed_replications.begin(), r.completed_replications.end(), rep) ==
        r.completed_replications.end())
        throw NotFoundError("run " + r.run_id + " has no replication " + std::to_string(rep));
    ReplicationData data = read_replication(r.output_dir / ("rep_" + std::to_string(rep)));

    const std::int64_t horizon = data.meta.horizon_hours;
    auto [t0, t1] = q.window.value_or(std::pair<std::int64_t, std::int64_t>{0, horizon - 1});
    if (t0 < 0 || t1 < t0 || t1 >= horizon)
        throw UsageError("window [" + std::to_string(t0) + "," + std::to_string(t1) +
                         "] is out of range for horizon " + std::to_string(horizon));

    TimeSeriesFrame frame;
    frame.run_id = r.run_id;
    frame.replication = rep;
    frame.metric = q.metric;
    frame.downsample = q.downsample;
    const auto& ids = data.meta.product_ids;
    const auto& series = data.metric(q.metric);
    bool matched = false;
    for (std::size_t p = 0; p < ids.size(); ++p) {
        if (q.product && ids[p] != *q.product)
            continue;
        matched = true;
        frame.product_ids.push_back(ids[p]);
        frame.values.push_back(slice_series(series[p], t0, t1, q.downsample, frame.hours));
    }
    if (!matched)
        throw NotFoundError("run " + r.run_id + " has no product '" + q.product.value_or("") + "'");
    return frame;
}

ReplicationBands Analyzer::aggregate_replications(std::string_view run_id, const std::string& metric,
                                                  const std::optional<std::string>& product)
{
    require_metric(metric);
    RunRecord r = readable_run(run_id);
    std::vector<ReplicationData> reps;
    for (auto k : r.completed_replications)
        reps.push_back(read_replication(r.output_dir / ("rep_" + std::to_string(k))));

    ReplicationBands bands;
    bands.run_id = r.run_id;
    bands.metric = metric;
    bands.replications = reps.size();
    const auto& ids = reps.front().meta.product_ids;
    const auto hours = static_cast<std::size_t>(reps.front().meta.horizon_hours);
    for (std::size_t p = 0; p < ids.size(); ++p) {
        if (product && ids[p] != *product)
            continue;
        SeriesBands s;
        s.product_id = ids[p];
        std::vector<double> column(reps.size());
        for (std::size_t h = 0; h < hours; ++h) {
            for (std::size_t k = 0; k < reps.size(); ++k)
                column[k] = reps[k].metric(metric)[p][h];
            KpiStats st = describe(column);
            const auto [lo, hi] = std::minmax_element(column.begin(), column.end());
            // Rounding in sum / n can step a hair outside the sample range.
            s.mean.push_back(std::clamp(*st.mean, *lo, *hi));
            s.std.push_back(*st.std);
            s.p5.push_back(*st.p5);
            s.p95.push_back(*st.p95);
        }
        bands.products.push_back(std::move(s));
    }
    if (bands.products.empty())
        throw NotFoundError("run " + r.run_id + " has no product '" + product.value_or("") + "'");
    return bands;
}

ComparisonReport Analyzer::compare_runs(std::string_view run_a, std::string_view run_b)
{
    return compare_summaries(load_kpis(run_a), load_kpis(run_b));
}

namespace {

struct Perturbed {
    double value = 0.0;
    std::string note;
};

Perturbed perturb(const FieldSpec& spec, double base, double factor)
{
    Perturbed out{base * factor, {}};
    if (spec.type == ValueType::integer)
        out.value = std::round(out.value);
    double lo = spec.min ? *spec.min : -INFINITY;
    if (spec.min && spec.min_exclusive)
        lo = std::nextafter(*spec.min, INFINITY);
    const double hi = spec.max ? *spec.max : INFINITY;
    if (spec.min && spec.min_exclusive && out.value <= *spec.min) {
        // Exclusive lower bounds (temperature, kpi_threshold_pct) clamp to a small positive step.
        out.value = std::max(lo, base * 1e-3);
        out.note = spec.name + " clamped to " + std::to_string(out.value) + " (must be > " +
                   std::to_string(*spec.min) + ")";
    } else if (out.value < lo || out.value > hi) {
        out.value = std::clamp(out.value, lo, hi);
        out.note = spec.name + " clamped to " + std::to_string(out.value) + " (valid range)";
    }
    return out;
}

} // namespace

DriverReport Analyzer::rank_drivers(const DriverRequest& req)
{
    if (req.parameters.empty())
        throw UsageError("rank_drivers needs at least one parameter");
    if (!(req.delta_pct >= 0.0) || !std::isfinite(req.delta_pct))
        throw UsageError("delta_pct must be a non-negative number");
    std::set<std::string> seen;
    for (const auto& p : req.parameters) {
        const FieldSpec* spec = find_field(InputFile::global_params, p);
        if (!spec || !spec->choices.empty())
            throw UsageError("'" + p + "' is not a numeric global parameter" +
                             (spec ? " (it selects an algorithm)" : ""));
        if (!seen.insert(p).second)
            throw UsageError("parameter '" + p + "' listed twice");
    }

    ScenarioConfig base = store_.load(req.scenario_id);
    {
        bool known = req.kpi == "final_adoption_rate" || req.kpi == "total_revenue" ||
                     req.kpi == "time_to_threshold_hour";
        for (const auto& prod : base.products)
            known = known || req.kpi == "market_share." + prod.product_id;
        if (!known)
            throw UsageError("unknown kpi '" + req.kpi +
                             "' (expected final_adoption_rate, total_revenue, time_to_threshold_hour "
                             "or market_share.<product_id>)");
    }
    if (ValidationReport report = validate(base); !report.ok)
        throw ValidationError("scenario '" + req.scenario_id + "' does not validate:\n" +
                                  report.to_text(),
                              report);

    DriverReport report;
    report.scenario_id = req.scenario_id;
    report.kpi = req.kpi;
    report.delta_pct = req.delta_pct;

    struct Pending {
        DriverEntry entry;
        std::string up_scenario;
        std::string down_scenario;
    };
    std::vector<Pending> pending;
    std::vector<std::string> ephemeral;
    auto cleanup = [&] {
        for (const auto& id : ephemeral) {
            try {
                store_.remove(id);
            } catch (const Error&) {
            }
        }
    };

    try {
        report.baseline_run_id =
            orchestrator_.submit({req.scenario_id, req.replications, req.base_seed, "drivers:baseline"});
        std::uint64_t tag = 0;
        {
            std::lock_guard guard(driver_mutex_);
            tag = ++driver_counter_;
        }
        for (const auto& param : req.parameters) {
            const FieldSpec& spec = *find_field(InputFile::global_params, param);
            Pending p;
            p.entry.parameter = param;
            p.entry.base_value = global_value(base.globals, param);
            auto up = perturb(spec, p.entry.base_value, 1.0 + req.delta_pct / 100.0);
            auto down = perturb(spec, p.entry.base_value, 1.0 - req.delta_pct / 100.0);
            p.entry.up_value = up.value;
            p.entry.down_value = down.value;
            for (const auto& n : {up.note, down.note})
                if (!n.empty())
                    p.entry.note += (p.entry.note.empty() ? "" : "; ") + n;

            auto launch = [&](double value, const char* dir) -> std::string {
                if (value == p.entry.base_value)
                    return report.baseline_run_id;
                InputPatch patch;
                patch.file = InputFile::global_params;
                patch.field = param;
                patch.value = spec.type == ValueType::integer
                                  ? json(static_cast<std::int64_t>(value))
                                  : json(value);
                const std::string name = "drv-" + std::to_string(tag) + "-" + req.scenario_id + "-" +
                                         param + "-" + dir;
                auto id = store_.derive(req.scenario_id, name, {patch}, true);
                ephemeral.push_back(id);
                return orchestrator_.submit({id, req.replications, req.base_seed,
                                             "drivers:" + param + ":" + dir});
            };
            p.entry.up_run_id = launch(up.value, "up");
            p.entry.down_run_id = launch(down.value, "down");
            pending.push_back(std::move(p));
        }

        auto kpi_of = [&](const std::string& run_id) {
            RunRecord r = orchestrator_.wait(run_id);
            if (r.status != RunStatus::succeeded)
                throw Error("driver run " + run_id + " ended " + std::string(to_string(r.status)) +
                            (r.failure.empty() ? "" : ": " + r.failure));
            KpiSummary summary = load_kpis(run_id);
            auto v = summary.mean_of(req.kpi);
            if (!v) {
                const auto horizon = read_replication(r.output_dir / "rep_0").meta.horizon_hours;
                return static_cast<double>(horizon);
            }
            return *v;
        };

        report.kpi_baseline = kpi_of(report.baseline_run_id);
        for (auto& p : pending) {
            p.entry.kpi_base = report.kpi_baseline;
            p.entry.kpi_up = kpi_of(p.entry.up_run_id);
            p.entry.kpi_down = kpi_of(p.entry.down_run_id);
            p.entry.influence = std::max(std::fabs(p.entry.kpi_up - p.entry.kpi_base),
                                         std::fabs(p.entry.kpi_down - p.entry.kpi_base));
            report.entries.push_back(p.entry);
        }
        if (req.kpi == "time_to_threshold_hour")
            report.notes.push_back("runs that never reach the threshold count as horizon_hours");
    } catch (...) {
        for (const auto& p : pending) {
            for (const auto& id : {p.entry.up_run_id, p.entry.down_run_id})
                if (!id.empty())
                    orchestrator_.cancel(id), orchestrator_.wait(id);
        }
        if (!report.baseline_run_id.empty())
            orchestrator_.wait(report.baseline_run_id);
        cleanup();
        throw;
    }
    cleanup();

    std::stable_sort(report.entries.begin(), report.entries.end(),
                     [](const DriverEntry& a, const DriverEntry& b) {
                         if (a.influence != b.influence)
                             return a.influence > b.influence;
                         return a.parameter < b.parameter;
                     });
    return report;
}

} // namespace simagent
