#pragma once

#include "simagent/types.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

namespace simagent {

enum class ValueType { integer, real, boolean, text };

// Static description of one input-file column or global parameter. Drives both
// validation and the documentation handed to planners.
struct FieldSpec {
    InputFile file;
    std::string name;
    ValueType type;
    std::optional<double> min;
    std::optional<double> max;
    bool min_exclusive = false;
    std::vector<FieldChoice> choices;
    bool row_key = false;       // identifies a row; not cell-patchable
    bool event_mutable = false; // may be the field of an events.csv row
    std::string unit;
    std::string description;
    std::string example;
};

const std::vector<FieldSpec>& field_specs();
const FieldSpec* find_field(InputFile file, std::string_view name);

// Message describing why value violates spec, or nullopt when it is acceptable.
std::optional<std::string> check_value(const FieldSpec& spec, double value);

// Throws NotFoundError listing the documented fields of file.
FieldDoc describe_field(InputFile file, std::string_view field);
std::vector<FieldDoc> all_field_docs();

double global_value(const GlobalParams& globals, std::string_view field);
void set_global_value(GlobalParams& globals, std::string_view field, double value);

// --- file model -----------------------------------------------------------

std::string render_global_params(const GlobalParams& globals);
std::string render_population(const std::vector<PopulationRow>& rows);
std::string render_products(const std::vector<ProductRow>& rows);
std::string render_events(const std::vector<Event>& rows);
std::string render_meta(const ScenarioConfig& config);
std::string render_file(const ScenarioConfig& config, InputFile file);

// Parses a scenario directory. Does not check value ranges; see validate().
ScenarioConfig load_scenario(const std::filesystem::path& dir);
void write_scenario(const ScenarioConfig& config, const std::filesystem::path& dir);

ValidationReport validate(const ScenarioConfig& config);

// Applies patch to config in memory (no validation of ranges). Throws NotFoundError for
// unresolvable locators, UsageError for type mismatches and ConflictError for immutable fields.
void apply_patch_to(ScenarioConfig& config, const InputPatch& patch);

// SHA-256 over the four data files as rendered to disk.
std::string fingerprint(const ScenarioConfig& config);

std::string slugify(std::string_view name);

struct BaselineOptions {
    std::size_t agents = 100;
    std::int64_t horizon_hours = 168;
    std::uint64_t seed = 1;
};

// The scaffolded "baseline" scenario: three products and a seeded random population.
ScenarioConfig make_baseline(const BaselineOptions& options = {});

// --- store ----------------------------------------------------------------

struct ScenarioInfo {
    std::string scenario_id;
    std::string name;
    std::optional<std::string> parent;
};

// Directory-per-scenario store rooted at <data_root>/scenarios. Readers share, writers to one
// scenario are serialized, and every write lands through a rename so readers never see a
// half-written scenario.
class ScenarioStore {
public:
    explicit ScenarioStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::filesystem::path directory(std::string_view scenario_id) const;

    bool exists(std::string_view scenario_id) const;
    ScenarioConfig load(std::string_view scenario_id) const;
    // Loads and pins in one step so no patch can land between the read and the pin.
    ScenarioConfig load_and_pin(std::string_view scenario_id);
    std::vector<ScenarioInfo> list(bool include_ephemeral = false) const;

    // Writes a new scenario; ConflictError if the id is taken.
    void create(const ScenarioConfig& config);

    ValidationReport apply_patch(std::string_view scenario_id, const InputPatch& patch);
    std::string derive(std::string_view base_id, std::string_view new_name,
                       const std::vector<InputPatch>& patches, bool ephemeral = false);
    void remove(std::string_view scenario_id);

    // Scenarios referenced by queued or running runs are read-only.
    void pin(std::string_view scenario_id);
    void unpin(std::string_view scenario_id);
    bool pinned(std::string_view scenario_id) const;

private:
    std::shared_mutex& lock_for(std::string_view scenario_id) const;
    void require_unpinned(std::string_view scenario_id) const;

    std::filesystem::path root_;
    mutable std::mutex table_mutex_;
    mutable std::map<std::string, std::unique_ptr<std::shared_mutex>, std::less<>> locks_;
    std::map<std::string, int, std::less<>> pins_;
    std::mutex derive_mutex_;
    std::uint64_t temp_counter_ = 0;
};

} // namespace simagent
