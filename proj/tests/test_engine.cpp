#include "support/support.hpp"

#include "simagent/engine.hpp"
#include "simagent/outputs.hpp"
#include "simagent/scenario.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>

using namespace simagent;
using testsupport::tiny_config;

TEST(Utility, WorkedExamples)
{
    GlobalParams g;
    g.beta_quality = 1.0;
    g.beta_price = 0.5;
    g.beta_digital = 2.0;
    g.beta_social = 0.4;
    ConsumerAgent a{1, 8, {}, {}};
    ProductState b{"B", "Beta", 4.0, 4.0, true, 0};
    // 4 - 2 + 2*0.8 + 0
    EXPECT_DOUBLE_EQ(utility(a, b, g, 0.0), 3.6);
    a.digital_savviness = 3;
    EXPECT_DOUBLE_EQ(utility(a, b, g, 0.5), 2.6 + 0.2);
    ProductState offline{"A", "Alpha", 2.0, 3.0, false, 0};
    EXPECT_DOUBLE_EQ(utility(a, offline, g, 0.0), 2.0);
}

TEST(Choice, ArgmaxTiesGoToLowestIndex)
{
    GlobalParams g;
    g.choice_function = 1;
    Rng rng(1);
    std::array<double, 3> u{1.0, 1.0, 0.5};
    EXPECT_EQ(choose(u, g, rng), 0u); // no-purchase wins the tie
    std::array<double, 3> v{0.0, 2.0, 2.0};
    EXPECT_EQ(choose(v, g, rng), 1u);
    EXPECT_EQ(rng.draws(), 0u);
}

TEST(Choice, LogitEqualUtilitiesAreUniform)
{
    GlobalParams g;
    g.choice_function = 2;
    g.temperature = 1.0;
    Rng rng(7);
    std::array<double, 3> u{0.3, 0.3, 0.3};
    std::array<int, 3> counts{};
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        counts[choose(u, g, rng)]++;
    for (int c : counts)
        EXPECT_NEAR(c / double(n), 1.0 / 3.0, 0.01);
    EXPECT_EQ(rng.draws(), std::uint64_t(n));
}

TEST(Choice, LogitLn3GivesThreeQuarters)
{
    GlobalParams g;
    g.choice_function = 2;
    g.temperature = 1.0;
    Rng rng(11);
    std::array<double, 2> u{0.0, std::log(3.0)};
    int picks = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        picks += choose(u, g, rng) == 1;
    EXPECT_NEAR(picks / double(n), 0.75, 0.01);
    auto p = logit_probabilities(u, 1.0);
    EXPECT_NEAR(p[1], 0.75, 1e-12);
}

TEST(Choice, LogitIsStableForLargeUtilities)
{
    auto p = logit_probabilities(std::array<double, 2>{1000.0, 1000.0 + std::log(3.0)}, 1.0);
    EXPECT_NEAR(p[0], 0.25, 1e-12);
    EXPECT_NEAR(p[1], 0.75, 1e-12);
}

TEST(Choice, EpsilonZeroMatchesArgmax)
{
    GlobalParams eg;
    eg.choice_function = 3;
    eg.epsilon = 0.0;
    Rng rng(5), gen(99);
    for (int i = 0; i < 10000; ++i) {
        std::vector<double> u(1 + i % 5);
        for (auto& x : u)
            x = std::floor(gen.uniform() * 4.0) / 2.0; // coarse grid so ties occur
        EXPECT_EQ(choose(u, eg, rng), argmax_option(u));
    }
}

TEST(Choice, EpsilonOneIsUniformOverAllOptions)
{
    GlobalParams g;
    g.choice_function = 3;
    g.epsilon = 1.0;
    Rng rng(3);
    std::array<double, 4> u{10.0, 0.0, 0.0, 0.0};
    std::array<int, 4> counts{};
    const int n = 40000;
    for (int i = 0; i < n; ++i)
        counts[choose(u, g, rng)]++;
    for (int c : counts)
        EXPECT_NEAR(c / double(n), 0.25, 0.01);
    EXPECT_EQ(rng.draws(), std::uint64_t(2 * n));
}

TEST(Engine, TinyInstanceMatchesHandDerivation)
{
    RunOutput out = run_simulation(tiny_config(), 1);
    ASSERT_EQ(out.hours.size(), 3u);
    // hour 0: savviness 8 picks B (3.6 > 2.7); savviness 3 stays out (2.6 < 2.7)
    EXPECT_EQ(out.hours[0].new_adopters, (std::vector<std::int64_t>{0, 1}));
    // hour 1: social term lifts B for savviness 3 to 2.8
    EXPECT_EQ(out.hours[1].new_adopters, (std::vector<std::int64_t>{0, 1}));
    EXPECT_EQ(out.hours[2].new_adopters, (std::vector<std::int64_t>{0, 0}));
    EXPECT_EQ(out.hours[2].cumulative_adopters, (std::vector<std::int64_t>{0, 2}));
    EXPECT_DOUBLE_EQ(out.hours[0].revenue[1], 4.0);
    EXPECT_DOUBLE_EQ(out.hours[1].revenue[1], 4.0);
    EXPECT_DOUBLE_EQ(out.hours[2].market_share[1], 1.0);
}

TEST(Engine, TinyInstanceMatchesOracle)
{
    const auto cfg = tiny_config();
    auto oracle = testsupport::argmax_oracle(cfg);
    RunOutput out = run_simulation(cfg, 123);
    ASSERT_EQ(out.hours.size(), oracle.size());
    for (std::size_t h = 0; h < oracle.size(); ++h) {
        EXPECT_EQ(out.hours[h].new_adopters, oracle[h].new_adopters) << "hour " << h;
        EXPECT_EQ(out.hours[h].cumulative_adopters, oracle[h].cumulative) << "hour " << h;
        EXPECT_EQ(out.hours[h].market_share, oracle[h].share) << "hour " << h;
        EXPECT_EQ(out.hours[h].revenue, oracle[h].revenue) << "hour " << h;
    }
}

TEST(Engine, OracleAgreesOnLargerArgmaxScenarioWithEvents)
{
    auto cfg = make_baseline({60, 48, 9});
    cfg.globals.choice_function = 1;
    cfg.globals.activation_prob = 1.0;
    cfg.globals.u_no_purchase = 2.0;
    cfg.events.push_back({10, "product:" + cfg.products[0].product_id, "price", cfg.products[0].price * 0.5});
    auto oracle = testsupport::argmax_oracle(cfg);
    RunOutput out = run_simulation(cfg, 1);
    for (std::size_t h = 0; h < oracle.size(); ++h) {
        ASSERT_EQ(out.hours[h].new_adopters, oracle[h].new_adopters) << "hour " << h;
        ASSERT_EQ(out.hours[h].revenue, oracle[h].revenue) << "hour " << h;
    }
}

TEST(Engine, ActivationZeroMeansNoAdoption)
{
    auto cfg = make_baseline({50, 24, 2});
    cfg.globals.activation_prob = 0.0;
    RunOutput out = run_simulation(cfg, 4);
    for (const auto& h : out.hours)
        EXPECT_EQ(h.total_cumulative_adopters, 0);
}

TEST(Engine, StepPastHorizonThrows)
{
    SimState s = init_state(tiny_config(), 1);
    for (int i = 0; i < 3; ++i)
        step_hour(s);
    EXPECT_THROW(step_hour(s), UsageError);
}

TEST(Engine, InvalidConfigIsRejected)
{
    auto cfg = tiny_config();
    cfg.globals.choice_function = 4;
    EXPECT_THROW(init_state(cfg, 1), ConfigError);
}

TEST(Engine, SameSeedSameTrajectoryDifferentSeedDiffers)
{
    auto cfg = make_baseline({100, 168, 1});
    cfg.globals.activation_prob = 0.05;
    auto a = run_simulation(cfg, 42);
    auto b = run_simulation(cfg, 42);
    auto c = run_simulation(cfg, 43);
    bool same = true, differs = false;
    for (std::size_t h = 0; h < a.hours.size(); ++h) {
        same = same && a.hours[h].new_adopters == b.hours[h].new_adopters;
        differs = differs || a.hours[h].new_adopters != c.hours[h].new_adopters;
    }
    EXPECT_TRUE(same);
    EXPECT_TRUE(differs);
}

TEST(Engine, EventPrefixIsUnchanged)
{
    auto base = make_baseline({100, 168, 1});
    base.globals.activation_prob = 0.05;
    auto with_event = base;
    const double new_price = base.products[0].price * 2.0;
    with_event.events.push_back({100, "product:" + base.products[0].product_id, "price", new_price});
    auto a = run_simulation(base, 42);
    auto b = run_simulation(with_event, 42);
    for (std::size_t h = 0; h < 100; ++h) {
        EXPECT_EQ(a.hours[h].new_adopters, b.hours[h].new_adopters);
        EXPECT_EQ(a.hours[h].revenue, b.hours[h].revenue);
    }
    for (std::size_t h = 100; h < 168; ++h)
        EXPECT_EQ(b.hours[h].revenue[0], b.hours[h].new_adopters[0] * new_price);
}

TEST(Engine, GlobalEventChangesBehaviourFromItsHour)
{
    auto cfg = make_baseline({80, 48, 1});
    cfg.globals.activation_prob = 0.2;
    cfg.events.push_back({24, "global", "activation_prob", 0.0});
    auto out = run_simulation(cfg, 9);
    for (std::size_t h = 24; h < 48; ++h)
        EXPECT_EQ(out.hours[h].total_new_adopters, 0) << "hour " << h;
}
