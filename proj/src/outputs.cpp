#include "simagent/outputs.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace simagent {

std::string format_fixed6(double value)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", value);
    std::string out(buf);
    if (out == "-0.000000")
        out = "0.000000";
    return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << text;
    out.close();
    if (!out)
        throw IoError("failed writing " + path.string());
}

std::string read_text(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

std::vector<fs::path> write_outputs(const RunOutput& output, const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create " + dir.string() + ": " + ec.message());

    std::string adoption = "hour,product_id,new_adopters,cumulative_adopters,market_share\n";
    std::string revenue = "hour,product_id,revenue\n";
    adoption.reserve(output.hours.size() * output.product_ids.size() * 32);
    revenue.reserve(output.hours.size() * output.product_ids.size() * 24);
    for (const auto& rec : output.hours) {
        const std::string hour = std::to_string(rec.hour);
        for (std::size_t p = 0; p < output.product_ids.size(); ++p) {
            const auto& pid = output.product_ids[p];
            adoption += hour + ',' + pid + ',' + std::to_string(rec.new_adopters[p]) + ',' +
                        std::to_string(rec.cumulative_adopters[p]) + ',' +
                        format_fixed6(rec.market_share[p]) + '\n';
            revenue += hour + ',' + pid + ',' + format_fixed6(rec.revenue[p]) + '\n';
        }
    }

    ordered_json meta;
    meta["seed"] = output.seed;
    meta["fingerprint"] = output.fingerprint;
    meta["horizon_hours"] = output.horizon_hours;
    meta["population"] = output.population;
    meta["kpi_threshold_pct"] = output.kpi_threshold_pct;
    meta["product_ids"] = output.product_ids;

    std::vector<fs::path> written{dir / "adoption.csv", dir / "revenue.csv", dir / "run_meta.json"};
    write_text(written[0], adoption);
    write_text(written[1], revenue);
    write_text(written[2], meta.dump(2) + "\n");
    return written;
}

const std::vector<std::vector<double>>& ReplicationData::metric(std::string_view name) const
{
    if (name == "new_adopters") return new_adopters;
    if (name == "cumulative_adopters") return cumulative_adopters;
    if (name == "market_share") return market_share;
    if (name == "revenue") return revenue;
    throw UsageError("unknown metric '" + std::string(name) +
                     "' (expected new_adopters, cumulative_adopters, market_share or revenue)");
}

namespace {

double cell_number(std::string_view text, const fs::path& file, std::size_t line)
{
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size())
        throw IoError(file.string() + ":" + std::to_string(line) + ": bad number '" +
                      std::string(text) + "'");
    return v;
}

// Calls fn(line_no, cells) for every data row after checking the header.
template <typename Fn>
void scan_csv(const fs::path& file, std::string_view header, std::size_t columns, Fn fn)
{
    std::istringstream in(read_text(file));
    std::string line;
    if (!std::getline(in, line) || line != header)
        throw IoError(file.string() + ": unexpected header");
    std::vector<std::string_view> cells(columns);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view(line);
        std::size_t start = 0;
        for (std::size_t c = 0; c < columns; ++c) {
            auto pos = c + 1 == columns ? view.size() : view.find(',', start);
            if (pos == std::string_view::npos)
                throw IoError(file.string() + ":" + std::to_string(line_no) + ": short row");
            cells[c] = view.substr(start, pos - start);
            start = pos + 1;
        }
        fn(line_no, cells);
    }
}

} // namespace

ReplicationData read_replication(const fs::path& dir)
{
    ReplicationData data;
    json meta;
    try {
        meta = json::parse(read_text(dir / "run_meta.json"));
        data.meta.seed = meta.at("seed").get<std::uint64_t>();
        data.meta.fingerprint = meta.at("fingerprint").get<std::string>();
        data.meta.horizon_hours = meta.at("horizon_hours").get<std::int64_t>();
        data.meta.population = meta.at("population").get<std::size_t>();
        data.meta.kpi_threshold_pct = meta.at("kpi_threshold_pct").get<double>();
        data.meta.product_ids = meta.at("product_ids").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw IoError((dir / "run_meta.json").string() + ": " + e.what());
    }

    const std::size_t n_products = data.meta.product_ids.size();
    const auto hours = static_cast<std::size_t>(data.meta.horizon_hours);
    for (auto* series : {&data.new_adopters, &data.cumulative_adopters, &data.market_share,
                         &data.revenue})
        series->assign(n_products, std::vector<double>(hours, 0.0));
    data.revenue_rows.reserve(n_products * hours);

    std::size_t row = 0;
    scan_csv(dir / "adoption.csv", "hour,product_id,new_adopters,cumulative_adopters,market_share", 5,
             [&](std::size_t line, const std::vector<std::string_view>& cells) {
                 const std::size_t h = row / n_products, p = row % n_products;
                 if (h >= hours || cells[1] != data.meta.product_ids[p])
                     throw IoError((dir / "adoption.csv").string() + ":" + std::to_string(line) +
                                   ": row out of order");
                 data.new_adopters[p][h] = cell_number(cells[2], dir / "adoption.csv", line);
                 data.cumulative_adopters[p][h] = cell_number(cells[3], dir / "adoption.csv", line);
                 data.market_share[p][h] = cell_number(cells[4], dir / "adoption.csv", line);
                 ++row;
             });
    if (row != n_products * hours)
        throw IoError((dir / "adoption.csv").string() + ": expected " +
                      std::to_string(n_products * hours) + " rows, found " + std::to_string(row));

    row = 0;
    scan_csv(dir / "revenue.csv", "hour,product_id,revenue", 3,
             [&](std::size_t line, const std::vector<std::string_view>& cells) {
                 const std::size_t h = row / n_products, p = row % n_products;
                 if (h >= hours || cells[1] != data.meta.product_ids[p])
                     throw IoError((dir / "revenue.csv").string() + ":" + std::to_string(line) +
                                   ": row out of order");
                 double v = cell_number(cells[2], dir / "revenue.csv", line);
                 data.revenue[p][h] = v;
                 data.revenue_rows.push_back(v);
                 ++row;
             });
    if (row != n_products * hours)
        throw IoError((dir / "revenue.csv").string() + ": expected " +
                      std::to_string(n_products * hours) + " rows, found " + std::to_string(row));
    return data;
}

ReplicationKpis compute_kpis(const ReplicationData& data)
{
    ReplicationKpis k;
    const auto& ids = data.meta.product_ids;
    const auto hours = static_cast<std::size_t>(data.meta.horizon_hours);
    const double population = static_cast<double>(data.meta.population);

    double final_adopters = 0.0;
    for (std::size_t p = 0; p < ids.size(); ++p)
        final_adopters += data.cumulative_adopters[p][hours - 1];
    k.final_adoption_rate = final_adopters / population;

    for (double v : data.revenue_rows)
        k.total_revenue += v;

    const double threshold = data.meta.kpi_threshold_pct * population / 100.0;
    for (std::size_t h = 0; h < hours; ++h) {
        double adopters = 0.0;
        for (std::size_t p = 0; p < ids.size(); ++p)
            adopters += data.cumulative_adopters[p][h];
        if (adopters >= threshold) {
            k.time_to_threshold_hour = static_cast<std::int64_t>(h);
            break;
        }
    }

    for (std::size_t p = 0; p < ids.size(); ++p)
        k.market_share.emplace_back(ids[p], data.market_share[p][hours - 1]);
    return k;
}

double nearest_rank(const std::vector<double>& sorted, double pct)
{
    const double n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    return sorted[rank - 1];
}

KpiStats describe(std::vector<double> values)
{
    KpiStats s;
    if (values.empty())
        return s;
    double sum = 0.0;
    for (double v : values)
        sum += v;
    const double n = static_cast<double>(values.size());
    const double mean = sum / n;
    double sq = 0.0;
    for (double v : values)
        sq += (v - mean) * (v - mean);
    s.mean = mean;
    s.std = std::sqrt(sq / n);
    std::sort(values.begin(), values.end());
    s.p5 = nearest_rank(values, 5.0);
    s.p95 = nearest_rank(values, 95.0);
    return s;
}

std::vector<std::string> KpiSummary::kpi_names() const
{
    std::vector<std::string> names{"final_adoption_rate", "total_revenue", "time_to_threshold_hour"};
    if (!per_replication.empty())
        for (const auto& [pid, share] : per_replication.front().market_share)
            names.push_back("market_share." + pid);
    return names;
}

std::vector<std::optional<double>> KpiSummary::values_of(std::string_view kpi) const
{
    std::vector<std::optional<double>> out;
    constexpr std::string_view share_prefix = "market_share.";
    for (const auto& r : per_replication) {
        if (kpi == "final_adoption_rate") {
            out.emplace_back(r.final_adoption_rate);
        } else if (kpi == "total_revenue") {
            out.emplace_back(r.total_revenue);
        } else if (kpi == "time_to_threshold_hour") {
            out.push_back(r.time_to_threshold_hour
                              ? std::optional<double>(static_cast<double>(*r.time_to_threshold_hour))
                              : std::nullopt);
        } else if (kpi.substr(0, share_prefix.size()) == share_prefix) {
            auto pid = kpi.substr(share_prefix.size());
            auto it = std::find_if(r.market_share.begin(), r.market_share.end(),
                                   [&](const auto& e) { return e.first == pid; });
            if (it == r.market_share.end())
                throw UsageError("unknown KPI '" + std::string(kpi) + "'");
            out.emplace_back(it->second);
        } else {
            throw UsageError("unknown KPI '" + std::string(kpi) +
                             "' (expected final_adoption_rate, total_revenue, "
                             "time_to_threshold_hour or market_share.<product_id>)");
        }
    }
    return out;
}

std::optional<double> KpiSummary::mean_of(std::string_view kpi) const
{
    std::vector<double> present;
    for (const auto& v : values_of(kpi))
        if (v)
            present.push_back(*v);
    if (present.size() == 1)
        return present.front();
    return describe(present).mean;
}

KpiSummary summarize(const std::string& run_id, const std::string& scenario_id,
                     const std::vector<ReplicationData>& replications)
{
    if (replications.empty())
        throw NotFoundError("run " + run_id + " has no completed replications");
    KpiSummary s;
    s.run_id = run_id;
    s.scenario_id = scenario_id;
    for (const auto& rep : replications)
        s.per_replication.push_back(compute_kpis(rep));
    if (s.per_replication.size() > 1) {
        for (const auto& name : s.kpi_names()) {
            std::vector<double> present;
            for (const auto& v : s.values_of(name))
                if (v)
                    present.push_back(*v);
            s.aggregate.emplace_back(name, describe(std::move(present)));
        }
    }
    return s;
}

namespace {

ordered_json optional_number(const std::optional<double>& v)
{
    return v ? ordered_json(*v) : ordered_json(nullptr);
}

} // namespace

ordered_json to_json(const KpiSummary& s)
{
    ordered_json j;
    j["run_id"] = s.run_id;
    j["scenario_id"] = s.scenario_id;
    j["replications"] = s.replications();
    j["per_replication"] = ordered_json::array();
    for (const auto& r : s.per_replication) {
        ordered_json e;
        e["final_adoption_rate"] = r.final_adoption_rate;
        e["total_revenue"] = r.total_revenue;
        e["time_to_threshold_hour"] =
            r.time_to_threshold_hour ? ordered_json(*r.time_to_threshold_hour) : ordered_json(nullptr);
        e["market_share"] = ordered_json::object();
        for (const auto& [pid, share] : r.market_share)
            e["market_share"][pid] = share;
        j["per_replication"].push_back(std::move(e));
    }
    if (s.replications() > 1) {
        j["aggregate"] = ordered_json::object();
        for (const auto& [name, stats] : s.aggregate)
            j["aggregate"][name] = {{"mean", optional_number(stats.mean)},
                                    {"std", optional_number(stats.std)},
                                    {"p5", optional_number(stats.p5)},
                                    {"p95", optional_number(stats.p95)}};
    }
    return j;
}

KpiSummary kpi_summary_from_json(const ordered_json& j)
{
    KpiSummary s;
    try {
        s.run_id = j.at("run_id").get<std::string>();
        s.scenario_id = j.at("scenario_id").get<std::string>();
        for (const auto& e : j.at("per_replication")) {
            ReplicationKpis r;
            r.final_adoption_rate = e.at("final_adoption_rate").get<double>();
            r.total_revenue = e.at("total_revenue").get<double>();
            if (!e.at("time_to_threshold_hour").is_null())
                r.time_to_threshold_hour = e["time_to_threshold_hour"].get<std::int64_t>();
            for (const auto& [pid, share] : e.at("market_share").items())
                r.market_share.emplace_back(pid, share.get<double>());
            s.per_replication.push_back(std::move(r));
        }
        if (j.contains("aggregate")) {
            for (const auto& [name, stats] : j["aggregate"].items()) {
                auto get = [&](const char* key) -> std::optional<double> {
                    return stats.at(key).is_null() ? std::nullopt
                                                   : std::optional<double>(stats[key].get<double>());
                };
                s.aggregate.emplace_back(name, KpiStats{get("mean"), get("std"), get("p5"), get("p95")});
            }
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed kpi summary: ") + e.what());
    }
    return s;
}

std::string render_kpi_summary(const KpiSummary& summary)
{
    return to_json(summary).dump(2) + "\n";
}

} // namespace simagent
