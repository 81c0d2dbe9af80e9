#include "support/support.hpp"

#include "simagent/outputs.hpp"
#include "simagent/scenario.hpp"

#include <gtest/gtest.h>

using namespace simagent;
using testsupport::TempDir;
using testsupport::slurp;

namespace {

ReplicationData written(const ScenarioConfig& cfg, std::uint64_t seed, const TempDir& dir, const std::string& sub)
{
    write_outputs(run_simulation(cfg, seed), dir / sub);
    return read_replication(dir / sub);
}

} // namespace

TEST(Format, SixDecimals)
{
    EXPECT_EQ(format_fixed6(0.5), "0.500000");
    EXPECT_EQ(format_fixed6(1.0 / 3.0), "0.333333");
    EXPECT_EQ(format_fixed6(12), "12.000000");
    EXPECT_EQ(format_fixed6(-0.0), "0.000000");
}

TEST(Outputs, FilesHaveCanonicalShape)
{
    TempDir dir;
    auto cfg = make_baseline({20, 24, 1});
    write_outputs(run_simulation(cfg, 5), dir / "rep");
    auto adoption = slurp(dir / "rep" / "adoption.csv");
    auto revenue = slurp(dir / "rep" / "revenue.csv");
    EXPECT_EQ(adoption.substr(0, adoption.find('\n')),
              "hour,product_id,new_adopters,cumulative_adopters,market_share");
    EXPECT_EQ(revenue.substr(0, revenue.find('\n')), "hour,product_id,revenue");
    EXPECT_EQ(std::count(adoption.begin(), adoption.end(), '\n'), 1 + 24 * 3);
    EXPECT_EQ(std::count(revenue.begin(), revenue.end(), '\n'), 1 + 24 * 3);
    auto meta = nlohmann::json::parse(slurp(dir / "rep" / "run_meta.json"));
    EXPECT_EQ(meta["seed"], 5);
    EXPECT_EQ(meta["fingerprint"], fingerprint(cfg));
}

TEST(Kpis, TinyInstanceByHand)
{
    TempDir dir;
    auto data = written(testsupport::tiny_config(), 1, dir, "r");
    auto k = compute_kpis(data);
    EXPECT_EQ(k.final_adoption_rate, 1.0);
    EXPECT_EQ(k.total_revenue, 8.0);
    // 50% of 2 agents = 1 adopter, reached at hour 0
    EXPECT_EQ(k.time_to_threshold_hour, std::optional<std::int64_t>(0));
    EXPECT_EQ(k.market_share[1].second, 1.0);
}

TEST(Kpis, EveryoneAdoptsAtHourZero)
{
    TempDir dir;
    auto cfg = testsupport::tiny_config();
    cfg.globals.u_no_purchase = -100.0;
    cfg.globals.kpi_threshold_pct = 100.0;
    auto k = compute_kpis(written(cfg, 1, dir, "r"));
    EXPECT_EQ(k.final_adoption_rate, 1.0);
    EXPECT_EQ(k.time_to_threshold_hour, std::optional<std::int64_t>(0));
}

TEST(Kpis, NoActivityGivesZerosAndNullThreshold)
{
    TempDir dir;
    auto cfg = make_baseline({30, 24, 1});
    cfg.globals.activation_prob = 0.0;
    auto k = compute_kpis(written(cfg, 1, dir, "r"));
    EXPECT_EQ(k.final_adoption_rate, 0.0);
    EXPECT_EQ(k.total_revenue, 0.0);
    EXPECT_FALSE(k.time_to_threshold_hour.has_value());
}

TEST(Stats, NearestRankAndPopulationStd)
{
    std::vector<double> v{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    auto s = describe(v);
    EXPECT_DOUBLE_EQ(*s.mean, 5.5);
    EXPECT_DOUBLE_EQ(*s.std, std::sqrt(8.25));
    EXPECT_EQ(*s.p5, 1.0);   // ceil(0.5) = 1
    EXPECT_EQ(*s.p95, 10.0); // ceil(9.5) = 10
    EXPECT_EQ(nearest_rank({3.0}, 95.0), 3.0);
    auto e = describe({});
    EXPECT_FALSE(e.mean.has_value());
    auto twenty = std::vector<double>(20);
    for (int i = 0; i < 20; ++i)
        twenty[i] = i + 1;
    EXPECT_EQ(*describe(twenty).p95, 19.0);
    EXPECT_EQ(*describe(twenty).p5, 1.0);
}

TEST(Summary, SingleReplicationHasNoAggregate)
{
    TempDir dir;
    auto data = written(make_baseline({20, 24, 1}), 1, dir, "r");
    auto s = summarize("run-1", "baseline", {data});
    EXPECT_TRUE(s.aggregate.empty());
    auto j = to_json(s);
    EXPECT_FALSE(j.contains("aggregate"));
    EXPECT_EQ(s.mean_of("total_revenue"), s.per_replication[0].total_revenue);
}

TEST(Summary, JsonRoundTrip)
{
    TempDir dir;
    auto cfg = make_baseline({20, 24, 1});
    cfg.globals.activation_prob = 0.05;
    std::vector<ReplicationData> reps;
    for (int k = 0; k < 3; ++k)
        reps.push_back(written(cfg, 10 + k, dir, "r" + std::to_string(k)));
    auto s = summarize("run-9", "baseline", reps);
    auto text = render_kpi_summary(s);
    auto back = kpi_summary_from_json(nlohmann::ordered_json::parse(text));
    EXPECT_EQ(render_kpi_summary(back), text);
    EXPECT_EQ(back.kpi_names(), s.kpi_names());
    EXPECT_EQ(s.kpi_names().back(), "market_share.P3");
}
