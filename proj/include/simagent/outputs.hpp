#pragma once

#include "simagent/engine.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace simagent {

// Canonical real formatting for output files: exactly six fractional digits.
std::string format_fixed6(double value);

// Writes adoption.csv, revenue.csv and run_meta.json into dir. Returns the written paths.
std::vector<std::filesystem::path> write_outputs(const RunOutput& output,
                                                 const std::filesystem::path& dir);

struct RunMeta {
    std::uint64_t seed = 0;
    std::string fingerprint;
    std::int64_t horizon_hours = 0;
    std::size_t population = 0;
    double kpi_threshold_pct = 50.0;
    std::vector<std::string> product_ids;
};

// One replication's series as read back from disk. Values are indexed [product][hour].
struct ReplicationData {
    RunMeta meta;
    std::vector<std::vector<double>> new_adopters;
    std::vector<std::vector<double>> cumulative_adopters;
    std::vector<std::vector<double>> market_share;
    std::vector<std::vector<double>> revenue;
    // Revenue cells in file order (hour-major), the summation order of total_revenue.
    std::vector<double> revenue_rows;

    const std::vector<std::vector<double>>& metric(std::string_view name) const;
};

ReplicationData read_replication(const std::filesystem::path& dir);

struct ReplicationKpis {
    double final_adoption_rate = 0.0;
    double total_revenue = 0.0;
    std::optional<std::int64_t> time_to_threshold_hour;
    std::vector<std::pair<std::string, double>> market_share;
};

ReplicationKpis compute_kpis(const ReplicationData& data);

struct KpiStats {
    std::optional<double> mean;
    std::optional<double> std;
    std::optional<double> p5;
    std::optional<double> p95;
};

// Population standard deviation, nearest-rank percentiles. Empty input yields all nullopt.
KpiStats describe(std::vector<double> values);
// Nearest-rank percentile of a sorted, non-empty sample.
double nearest_rank(const std::vector<double>& sorted, double pct);

struct KpiSummary {
    std::string run_id;
    std::string scenario_id;
    std::vector<ReplicationKpis> per_replication;
    // Present iff more than one replication. Keys: final_adoption_rate, total_revenue,
    // time_to_threshold_hour, market_share.<product_id>.
    std::vector<std::pair<std::string, KpiStats>> aggregate;

    std::size_t replications() const { return per_replication.size(); }
    std::vector<std::string> kpi_names() const;
    // Replication mean of a KPI (the single value when there is one replication).
    std::optional<double> mean_of(std::string_view kpi) const;
    std::vector<std::optional<double>> values_of(std::string_view kpi) const;
};

KpiSummary summarize(const std::string& run_id, const std::string& scenario_id,
                     const std::vector<ReplicationData>& replications);

nlohmann::ordered_json to_json(const KpiSummary& summary);
// Product order follows the document, so parse with ordered_json.
KpiSummary kpi_summary_from_json(const nlohmann::ordered_json& j);
// Serialized form written to kpi_summary.json.
std::string render_kpi_summary(const KpiSummary& summary);

} // namespace simagent
