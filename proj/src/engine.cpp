#include "simagent/engine.hpp"

#include "simagent/scenario.hpp"

#include <algorithm>
#include <cmath>

namespace simagent {

SimState init_state(const ScenarioConfig& config, std::uint64_t seed)
{
    ValidationReport report = validate(config);
    if (!report.ok) {
        const auto& issue = *std::find_if(report.issues.begin(), report.issues.end(),
                                          [](const auto& i) { return i.severity == Severity::error; });
        throw ConfigError("configuration error in " + issue.file +
                          (issue.locator.empty() ? "" : " [" + issue.locator + "]") + ": " +
                          issue.message);
    }

    SimState state;
    state.globals = config.globals;
    state.rng = Rng(seed);
    state.agents.reserve(config.population.size());
    for (const auto& row : config.population)
        state.agents.push_back({row.agent_id, row.digital_savviness, std::nullopt, std::nullopt});
    for (const auto& p : config.products)
        state.products.push_back({p.product_id, p.name, p.price, p.quality, p.digital_channel, 0});
    state.events = config.events;
    std::stable_sort(state.events.begin(), state.events.end(),
                     [](const Event& a, const Event& b) { return a.hour < b.hour; });
    return state;
}

double utility(const ConsumerAgent& agent, const ProductState& product, const GlobalParams& g,
               double prev_share)
{
    const double digital = product.digital_channel ? 1.0 : 0.0;
    return g.beta_quality * product.quality - g.beta_price * product.price +
           g.beta_digital * (agent.digital_savviness / 10.0) * digital + g.beta_social * prev_share;
}

std::size_t argmax_option(std::span<const double> utilities)
{
    std::size_t best = 0;
    for (std::size_t k = 1; k < utilities.size(); ++k)
        if (utilities[k] > utilities[best])
            best = k;
    return best;
}

std::vector<double> logit_probabilities(std::span<const double> utilities, double temperature)
{
    const double top = *std::max_element(utilities.begin(), utilities.end());
    std::vector<double> weights(utilities.size());
    double total = 0.0;
    for (std::size_t k = 0; k < utilities.size(); ++k) {
        weights[k] = std::exp((utilities[k] - top) / temperature);
        total += weights[k];
    }
    for (auto& w : weights)
        w /= total;
    return weights;
}

namespace {

std::size_t sample_logit(std::span<const double> utilities, double temperature, Rng& rng)
{
    const double top = *std::max_element(utilities.begin(), utilities.end());
    // Small option sets; weights are recomputed rather than allocated per call.
    double total = 0.0;
    for (double u : utilities)
        total += std::exp((u - top) / temperature);
    const double target = rng.uniform() * total;
    double running = 0.0;
    for (std::size_t k = 0; k < utilities.size(); ++k) {
        running += std::exp((utilities[k] - top) / temperature);
        if (target < running)
            return k;
    }
    return utilities.size() - 1;
}

} // namespace

std::size_t choose(std::span<const double> utilities, const GlobalParams& g, Rng& rng)
{
    switch (static_cast<ChoiceFunction>(g.choice_function)) {
    case ChoiceFunction::logit:
        return sample_logit(utilities, g.temperature, rng);
    case ChoiceFunction::epsilon_greedy: {
        const double branch = rng.uniform();
        if (branch < g.epsilon) {
            auto pick = static_cast<std::size_t>(rng.uniform() * static_cast<double>(utilities.size()));
            return std::min(pick, utilities.size() - 1);
        }
        return argmax_option(utilities);
    }
    case ChoiceFunction::argmax:
    default:
        return argmax_option(utilities);
    }
}

void apply_events(SimState& state, std::int64_t hour)
{
    while (state.next_event < state.events.size() && state.events[state.next_event].hour < hour)
        ++state.next_event;
    while (state.next_event < state.events.size() && state.events[state.next_event].hour == hour) {
        const Event& e = state.events[state.next_event++];
        if (e.is_global()) {
            set_global_value(state.globals, e.field, e.value);
            continue;
        }
        const auto pid = e.product_id();
        auto it = std::find_if(state.products.begin(), state.products.end(),
                               [&](const ProductState& p) { return p.product_id == pid; });
        if (it == state.products.end())
            continue;
        if (e.field == "price") it->price = e.value;
        else if (e.field == "quality") it->quality = e.value;
        else if (e.field == "digital_channel") it->digital_channel = e.value != 0.0;
    }
}

HourRecord step_hour(SimState& state)
{
    if (state.hour >= state.globals.horizon_hours)
        throw UsageError("cannot step past the horizon (hour " + std::to_string(state.hour) + " of " +
                         std::to_string(state.globals.horizon_hours) + ")");

    apply_events(state, state.hour);

    const std::size_t n_products = state.products.size();
    const double population = static_cast<double>(state.agents.size());
    std::vector<double> prev_share(n_products);
    for (std::size_t p = 0; p < n_products; ++p)
        prev_share[p] = static_cast<double>(state.products[p].cumulative_adopters) / population;

    HourRecord rec;
    rec.hour = state.hour;
    rec.new_adopters.assign(n_products, 0);
    rec.revenue.assign(n_products, 0.0);

    const GlobalParams& g = state.globals;
    std::vector<double> utilities(n_products + 1);
    utilities[0] = g.u_no_purchase;
    for (auto& agent : state.agents) {
        if (agent.adopted_product)
            continue;
        if (!(state.rng.uniform() < g.activation_prob))
            continue;
        for (std::size_t p = 0; p < n_products; ++p)
            utilities[p + 1] = utility(agent, state.products[p], g, prev_share[p]);
        const std::size_t option = choose(utilities, g, state.rng);
        if (option == 0)
            continue;
        agent.adopted_product = option - 1;
        agent.adoption_hour = state.hour;
        rec.new_adopters[option - 1] += 1;
    }

    rec.cumulative_adopters.resize(n_products);
    rec.market_share.resize(n_products);
    for (std::size_t p = 0; p < n_products; ++p) {
        auto& product = state.products[p];
        product.cumulative_adopters += rec.new_adopters[p];
        rec.revenue[p] = static_cast<double>(rec.new_adopters[p]) * product.price;
        rec.cumulative_adopters[p] = product.cumulative_adopters;
        rec.market_share[p] = static_cast<double>(product.cumulative_adopters) / population;
        rec.total_new_adopters += rec.new_adopters[p];
        rec.total_cumulative_adopters += product.cumulative_adopters;
        rec.total_revenue += rec.revenue[p];
    }
    ++state.hour;
    return rec;
}

StateDigest digest(const SimState& state)
{
    StateDigest d;
    d.hour = state.hour;
    for (const auto& a : state.agents)
        d.non_adopted += a.adopted_product ? 0 : 1;
    for (const auto& p : state.products) {
        d.cumulative_adopters.push_back(p.cumulative_adopters);
        d.prices.push_back(p.price);
    }
    return d;
}

RunOutput run_simulation(const ScenarioConfig& config, std::uint64_t seed)
{
    SimState state = init_state(config, seed);
    RunOutput out;
    out.seed = seed;
    out.fingerprint = fingerprint(config);
    out.horizon_hours = config.globals.horizon_hours;
    out.population = state.agents.size();
    out.kpi_threshold_pct = config.globals.kpi_threshold_pct;
    for (const auto& p : state.products)
        out.product_ids.push_back(p.product_id);
    out.hours.reserve(static_cast<std::size_t>(config.globals.horizon_hours));
    while (state.hour < config.globals.horizon_hours)
        out.hours.push_back(step_hour(state));
    out.final_state = digest(state);
    return out;
}

} // namespace simagent
