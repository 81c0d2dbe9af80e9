#pragma once

#include "simagent/types.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace simagent {

// Per-run generator. mt19937_64 seeded directly with the run seed; uniforms take the top
// 53 bits so draws are identical for a given standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    // Uniform in [0, 1).
    double uniform() {
        ++draws_;
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Number of uniform() calls so far.
    std::uint64_t draws() const { return draws_; }

private:
    std::mt19937_64 engine_;
    std::uint64_t draws_ = 0;
};

struct ConsumerAgent {
    std::int64_t agent_id = 0;
    int digital_savviness = 1;
    std::optional<std::size_t> adopted_product; // index into SimState::products
    std::optional<std::int64_t> adoption_hour;
};

struct ProductState {
    std::string product_id;
    std::string name;
    double price = 0.0;
    double quality = 0.0;
    bool digital_channel = false;
    std::int64_t cumulative_adopters = 0;
};

struct HourRecord {
    std::int64_t hour = 0;
    std::vector<std::int64_t> new_adopters;
    std::vector<std::int64_t> cumulative_adopters;
    std::vector<double> market_share;
    std::vector<double> revenue;
    std::int64_t total_new_adopters = 0;
    std::int64_t total_cumulative_adopters = 0;
    double total_revenue = 0.0;
};

struct SimState {
    GlobalParams globals;
    std::vector<ConsumerAgent> agents;
    std::vector<ProductState> products;
    std::vector<Event> events; // stable-sorted by hour
    std::size_t next_event = 0;
    std::int64_t hour = 0;
    Rng rng{0};
};

struct StateDigest {
    std::int64_t hour = 0;
    std::int64_t non_adopted = 0;
    std::vector<std::int64_t> cumulative_adopters;
    std::vector<double> prices;
};

struct RunOutput {
    std::uint64_t seed = 0;
    std::string fingerprint;
    std::int64_t horizon_hours = 0;
    std::size_t population = 0;
    double kpi_threshold_pct = 50.0;
    std::vector<std::string> product_ids;
    std::vector<HourRecord> hours;
    StateDigest final_state;
};

// Throws ConfigError naming the first offending file and field when config does not validate.
SimState init_state(const ScenarioConfig& config, std::uint64_t seed);

double utility(const ConsumerAgent& agent, const ProductState& product, const GlobalParams& globals,
               double prev_share);

// utilities[0] is the no-purchase option. Returns the chosen option index.
//   argmax:         no draws
//   logit:          one draw
//   epsilon-greedy: one draw to branch, plus one to pick on the explore branch
std::size_t choose(std::span<const double> utilities, const GlobalParams& globals, Rng& rng);
std::size_t argmax_option(std::span<const double> utilities);
// Analytic selection probabilities of the logit rule, for tests and diagnostics.
std::vector<double> logit_probabilities(std::span<const double> utilities, double temperature);

void apply_events(SimState& state, std::int64_t hour);

// Throws UsageError when the state has already reached the horizon.
HourRecord step_hour(SimState& state);

StateDigest digest(const SimState& state);

// Pure function of (config, seed); safe to call concurrently.
RunOutput run_simulation(const ScenarioConfig& config, std::uint64_t seed);

} // namespace simagent
