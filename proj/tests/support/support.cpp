#include "support.hpp"

#include <httplib.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace simagent;

namespace testsupport {

TempDir::TempDir()
{
    std::string tmpl = (fs::temp_directory_path() / "simagent-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data()))
        throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir()
{
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::string slurp(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ScenarioConfig tiny_config()
{
    ScenarioConfig c;
    c.scenario_id = "tiny";
    c.name = "tiny";
    c.globals.horizon_hours = 3;
    c.globals.choice_function = 1;
    c.globals.beta_quality = 1.0;
    c.globals.beta_price = 0.5;
    c.globals.beta_digital = 2.0;
    c.globals.beta_social = 0.4;
    c.globals.u_no_purchase = 2.7;
    c.globals.activation_prob = 1.0;
    c.globals.epsilon = 0.0;
    c.globals.temperature = 1.0;
    c.globals.kpi_threshold_pct = 50.0;
    c.population = {{1, 3}, {2, 8}};
    c.products = {{"A", "Alpha", 2.0, 3.0, false}, {"B", "Beta", 4.0, 4.0, true}};
    return c;
}

ScenarioConfig small_config(const std::string& id, std::size_t agents, std::int64_t horizon)
{
    BaselineOptions opts;
    opts.agents = agents;
    opts.horizon_hours = horizon;
    opts.seed = 3;
    ScenarioConfig c = make_baseline(opts);
    c.scenario_id = id;
    c.name = id;
    c.globals.activation_prob = 0.05;
    return c;
}

std::vector<OracleHour> argmax_oracle(const ScenarioConfig& c)
{
    const auto& g = c.globals;
    const std::size_t P = c.products.size();
    const double N = static_cast<double>(c.population.size());
    std::vector<double> price, quality, digital;
    for (const auto& p : c.products) {
        price.push_back(p.price);
        quality.push_back(p.quality);
        digital.push_back(p.digital_channel ? 1.0 : 0.0);
    }
    std::vector<int> owned(c.population.size(), -1);
    std::vector<std::int64_t> cum(P, 0);
    std::vector<OracleHour> out;

    for (std::int64_t t = 0; t < g.horizon_hours; ++t) {
        for (const auto& e : c.events) {
            if (e.hour != t || e.is_global())
                continue;
            for (std::size_t j = 0; j < P; ++j) {
                if ("product:" + c.products[j].product_id != e.target)
                    continue;
                if (e.field == "price") price[j] = e.value;
                if (e.field == "quality") quality[j] = e.value;
                if (e.field == "digital_channel") digital[j] = e.value;
            }
        }
        std::vector<double> share(P);
        for (std::size_t j = 0; j < P; ++j)
            share[j] = cum[j] / N;

        OracleHour h{t, std::vector<std::int64_t>(P, 0), {}, {}, {}};
        for (std::size_t i = 0; i < c.population.size(); ++i) {
            if (owned[i] >= 0)
                continue;
            const double ds = c.population[i].digital_savviness;
            double best_u = g.u_no_purchase;
            int best = -1;
            for (std::size_t j = 0; j < P; ++j) {
                double u = g.beta_quality * quality[j] - g.beta_price * price[j] +
                           g.beta_digital * (ds / 10.0) * digital[j] + g.beta_social * share[j];
                if (u > best_u) {
                    best_u = u;
                    best = static_cast<int>(j);
                }
            }
            if (best >= 0) {
                owned[i] = best;
                h.new_adopters[static_cast<std::size_t>(best)]++;
            }
        }
        for (std::size_t j = 0; j < P; ++j) {
            cum[j] += h.new_adopters[j];
            h.cumulative.push_back(cum[j]);
            h.share.push_back(cum[j] / N);
            h.revenue.push_back(h.new_adopters[j] * price[j]);
        }
        out.push_back(std::move(h));
    }
    return out;
}

// --- KPI checker ----------------------------------------------------------

namespace {

std::vector<std::vector<std::string>> csv_rows(const fs::path& path, const std::string& header)
{
    std::istringstream in(slurp(path));
    std::string line;
    std::getline(in, line);
    if (line != header)
        throw std::runtime_error(path.string() + ": unexpected header '" + line + "'");
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ','))
            cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

struct Rep {
    double final_rate;
    double revenue;
    std::optional<double> ttt;
    std::map<std::string, double> share;
};

Rep recompute(const fs::path& dir, std::vector<std::string>& product_order)
{
    const json meta = json::parse(slurp(dir / "run_meta.json"));
    const double N = meta.at("population").get<double>();
    const double pct = meta.at("kpi_threshold_pct").get<double>();
    const auto H = meta.at("horizon_hours").get<std::int64_t>();

    Rep r{};
    std::map<std::int64_t, double> adopters_by_hour;
    std::map<std::string, double> last_share;
    std::map<std::string, double> last_cum;
    product_order.clear();
    for (const auto& row : csv_rows(dir / "adoption.csv",
                                    "hour,product_id,new_adopters,cumulative_adopters,market_share")) {
        const auto hour = std::stoll(row.at(0));
        const double cum = std::strtod(row.at(3).c_str(), nullptr);
        adopters_by_hour[hour] += cum;
        if (hour == 0)
            product_order.push_back(row.at(1));
        if (hour == H - 1) {
            last_share[row.at(1)] = std::strtod(row.at(4).c_str(), nullptr);
            last_cum[row.at(1)] = cum;
        }
    }
    double final_adopters = 0.0;
    for (const auto& pid : product_order)
        final_adopters += last_cum[pid];
    r.final_rate = final_adopters / N;
    r.share = last_share;

    for (const auto& row : csv_rows(dir / "revenue.csv", "hour,product_id,revenue"))
        r.revenue += std::strtod(row.at(2).c_str(), nullptr);

    const double threshold = pct * N / 100.0;
    for (const auto& [hour, a] : adopters_by_hour)
        if (a >= threshold) {
            r.ttt = static_cast<double>(hour);
            break;
        }
    return r;
}

void expect_equal(std::vector<std::string>& errors, const std::string& what, const json& stored,
                  std::optional<double> expected)
{
    if (!expected) {
        if (!stored.is_null())
            errors.push_back(what + ": expected null, found " + stored.dump());
        return;
    }
    if (!stored.is_number() || stored.get<double>() != *expected)
        errors.push_back(what + ": expected " + json(*expected).dump() + ", found " + stored.dump());
}

struct Stats {
    double mean, std, p5, p95;
};

std::optional<Stats> stats_of(std::vector<double> v)
{
    if (v.empty())
        return std::nullopt;
    double sum = 0.0;
    for (double x : v)
        sum += x;
    const double mean = sum / v.size();
    double ss = 0.0;
    for (double x : v)
        ss += (x - mean) * (x - mean);
    std::sort(v.begin(), v.end());
    auto rank = [&](double q) {
        // smallest value with at least q% of the sample at or below it
        std::size_t k = 1;
        while (k < v.size() && static_cast<double>(k) < q / 100.0 * v.size())
            ++k;
        return v[k - 1];
    };
    return Stats{mean, std::sqrt(ss / v.size()), rank(5.0), rank(95.0)};
}

} // namespace

std::vector<std::string> check_kpi_summary(const fs::path& run_dir)
{
    std::vector<std::string> errors;
    const json summary = json::parse(slurp(run_dir / "kpi_summary.json"));
    const auto reps = summary.at("replications").get<std::size_t>();
    const auto& per = summary.at("per_replication");
    if (per.size() != reps)
        errors.push_back("per_replication has " + std::to_string(per.size()) + " entries, replications says " +
                         std::to_string(reps));

    std::vector<std::size_t> indices;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        const auto name = entry.path().filename().string();
        if (entry.is_directory() && name.rfind("rep_", 0) == 0)
            indices.push_back(std::stoul(name.substr(4)));
    }
    std::sort(indices.begin(), indices.end());

    std::vector<Rep> computed;
    std::vector<std::string> products;
    for (std::size_t i = 0; i < indices.size() && i < per.size(); ++i) {
        Rep r = recompute(run_dir / ("rep_" + std::to_string(indices[i])), products);
        const std::string tag = "rep " + std::to_string(indices[i]) + " ";
        expect_equal(errors, tag + "final_adoption_rate", per[i].at("final_adoption_rate"), r.final_rate);
        expect_equal(errors, tag + "total_revenue", per[i].at("total_revenue"), r.revenue);
        expect_equal(errors, tag + "time_to_threshold_hour", per[i].at("time_to_threshold_hour"), r.ttt);
        for (const auto& pid : products)
            expect_equal(errors, tag + "market_share." + pid, per[i].at("market_share").value(pid, json()),
                         r.share[pid]);
        computed.push_back(std::move(r));
    }

    if (reps > 1) {
        if (!summary.contains("aggregate")) {
            errors.push_back("aggregate missing for " + std::to_string(reps) + " replications");
            return errors;
        }
        std::map<std::string, std::vector<double>> samples;
        for (const auto& r : computed) {
            samples["final_adoption_rate"].push_back(r.final_rate);
            samples["total_revenue"].push_back(r.revenue);
            if (r.ttt)
                samples["time_to_threshold_hour"].push_back(*r.ttt);
            else
                samples["time_to_threshold_hour"];
            for (const auto& pid : products)
                samples["market_share." + pid].push_back(r.share.at(pid));
        }
        const auto& agg = summary["aggregate"];
        for (const auto& [name, values] : samples) {
            if (!agg.contains(name)) {
                errors.push_back("aggregate lacks " + name);
                continue;
            }
            auto s = stats_of(values);
            expect_equal(errors, name + ".mean", agg[name].at("mean"), s ? std::optional(s->mean) : std::nullopt);
            expect_equal(errors, name + ".std", agg[name].at("std"), s ? std::optional(s->std) : std::nullopt);
            expect_equal(errors, name + ".p5", agg[name].at("p5"), s ? std::optional(s->p5) : std::nullopt);
            expect_equal(errors, name + ".p95", agg[name].at("p95"), s ? std::optional(s->p95) : std::nullopt);
        }
    } else if (summary.contains("aggregate")) {
        errors.push_back("aggregate present for a single replication");
    }
    return errors;
}

// --- stub LLM ---------------------------------------------------------------

StubLlm::StubLlm() : server_(std::make_unique<httplib::Server>())
{
    server_->Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
        json reply;
        {
            std::lock_guard guard(mutex_);
            requests_.push_back(json::parse(req.body));
            auth_.push_back(req.get_header_value("Authorization"));
            if (replies_.empty()) {
                reply = {{"role", "assistant"}, {"content", "stub has nothing queued"}};
            } else {
                reply = replies_.front();
                replies_.pop_front();
            }
        }
        json body{{"id", "chatcmpl-stub"},
                  {"object", "chat.completion"},
                  {"choices", json::array({{{"index", 0}, {"message", reply},
                                            {"finish_reason", reply.contains("tool_calls") ? "tool_calls" : "stop"}}})}};
        res.set_content(body.dump(), "application/json");
    });
    port_ = server_->bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

StubLlm::~StubLlm()
{
    server_->stop();
    if (thread_.joinable())
        thread_.join();
}

void StubLlm::push_message(json message)
{
    std::lock_guard guard(mutex_);
    message["role"] = "assistant";
    replies_.push_back(std::move(message));
}

void StubLlm::push_tool_call(const std::string& name, const std::string& arguments_text, const std::string& id)
{
    push_message({{"content", nullptr},
                  {"tool_calls", json::array({{{"id", id},
                                               {"type", "function"},
                                               {"function", {{"name", name}, {"arguments", arguments_text}}}}})}});
}

void StubLlm::push_text(const std::string& text)
{
    push_message({{"content", text}});
}

std::string StubLlm::base_url() const
{
    return "http://127.0.0.1:" + std::to_string(port_) + "/v1";
}

std::vector<json> StubLlm::requests() const
{
    std::lock_guard guard(mutex_);
    return requests_;
}

std::vector<std::string> StubLlm::auth_headers() const
{
    std::lock_guard guard(mutex_);
    return auth_;
}

} // namespace testsupport
