#pragma once

#include "simagent/orchestrator.hpp"
#include "simagent/outputs.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace simagent {

enum class Downsample { none, daily_mean, weekly_mean };

std::string_view to_string(Downsample mode);
std::optional<Downsample> parse_downsample(std::string_view text);

struct SeriesQuery {
    std::string metric;
    std::optional<std::string> product;
    std::optional<std::size_t> replication;
    std::optional<std::pair<std::int64_t, std::int64_t>> window; // inclusive hours
    Downsample downsample = Downsample::none;
};

struct TimeSeriesFrame {
    std::string run_id;
    std::size_t replication = 0;
    std::string metric;
    Downsample downsample = Downsample::none;
    std::vector<std::int64_t> hours; // first hour of each point
    std::vector<std::string> product_ids;
    std::vector<std::vector<double>> values; // [product][point]
};

nlohmann::ordered_json to_json(const TimeSeriesFrame& frame);

// Windowed, optionally block-averaged view of one series. Window is applied first; a final
// partial block is averaged over its own length.
// hours receives the first hour of each output point.
std::vector<double> slice_series(const std::vector<double>& series, std::int64_t t0, std::int64_t t1,
                                 Downsample mode, std::vector<std::int64_t>& hours);

struct SeriesBands {
    std::string product_id;
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<double> p5;
    std::vector<double> p95;
};

struct ReplicationBands {
    std::string run_id;
    std::string metric;
    std::size_t replications = 0;
    std::vector<SeriesBands> products;
};

nlohmann::ordered_json to_json(const ReplicationBands& bands);

struct KpiDelta {
    std::string kpi;
    std::optional<double> value_a;
    std::optional<double> value_b;
    std::optional<double> delta;     // value_b - value_a
    std::optional<double> pct_delta; // null when value_a is 0 or either side is null
};

struct ComparisonReport {
    std::string run_a;
    std::string run_b;
    std::vector<KpiDelta> entries; // ordered by |pct_delta| descending, nulls last
    std::vector<std::string> notes;
};

nlohmann::ordered_json to_json(const ComparisonReport& report);
ComparisonReport compare_summaries(const KpiSummary& a, const KpiSummary& b);

struct DriverEntry {
    std::string parameter;
    double base_value = 0.0;
    double up_value = 0.0;
    double down_value = 0.0;
    double kpi_base = 0.0;
    double kpi_up = 0.0;
    double kpi_down = 0.0;
    double influence = 0.0;
    std::string up_run_id;
    std::string down_run_id;
    std::string note;
};

struct DriverReport {
    std::string scenario_id;
    std::string kpi;
    double delta_pct = 10.0;
    std::string baseline_run_id;
    double kpi_baseline = 0.0;
    std::vector<DriverEntry> entries; // ranked by influence descending, ties by name
    std::vector<std::string> notes;
};

nlohmann::ordered_json to_json(const DriverReport& report);

struct DriverRequest {
    std::string scenario_id;
    std::string kpi = "total_revenue";
    std::vector<std::string> parameters;
    double delta_pct = 10.0;
    std::uint64_t base_seed = 42;
    std::size_t replications = 1;
};

// Read-side analysis over run outputs, plus OAT driver ranking executed through the orchestrator.
class Analyzer {
public:
    Analyzer(ScenarioStore& store, Orchestrator& orchestrator);

    // Recomputes the summary from the stored series and rewrites kpi_summary.json.
    KpiSummary summarize_kpis(std::string_view run_id);
    // kpi_summary.json as stored (computed first if missing).
    KpiSummary load_kpis(std::string_view run_id);

    TimeSeriesFrame query_series(std::string_view run_id, const SeriesQuery& query);
    ReplicationBands aggregate_replications(std::string_view run_id, const std::string& metric,
                                            const std::optional<std::string>& product = {});
    ComparisonReport compare_runs(std::string_view run_a, std::string_view run_b);
    DriverReport rank_drivers(const DriverRequest& request);

private:
    RunRecord readable_run(std::string_view run_id) const;

    ScenarioStore& store_;
    Orchestrator& orchestrator_;
    std::mutex driver_mutex_;
    std::uint64_t driver_counter_ = 0;
};

} // namespace simagent
