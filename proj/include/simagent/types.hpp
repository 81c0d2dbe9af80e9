#pragma once

#include "simagent/error.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace simagent {

enum class ChoiceFunction : int { argmax = 1, logit = 2, epsilon_greedy = 3 };

struct GlobalParams {
    std::int64_t horizon_hours = 8760;
    int choice_function = 1;
    double beta_price = 0.0;
    double beta_quality = 0.0;
    double beta_digital = 0.0;
    double beta_social = 0.0;
    double u_no_purchase = 0.0;
    double activation_prob = 0.0;
    double epsilon = 0.0;
    double temperature = 1.0;
    double kpi_threshold_pct = 50.0;

    bool operator==(const GlobalParams&) const = default;
};

// One row of population.csv.
struct PopulationRow {
    std::int64_t agent_id = 0;
    int digital_savviness = 1;

    bool operator==(const PopulationRow&) const = default;
};

// One row of products.csv.
struct ProductRow {
    std::string product_id;
    std::string name;
    double price = 0.0;
    double quality = 0.0;
    bool digital_channel = false;

    bool operator==(const ProductRow&) const = default;
};

// One row of events.csv. target is "global" or "product:<product_id>".
struct Event {
    std::int64_t hour = 0;
    std::string target;
    std::string field;
    double value = 0.0;

    bool is_global() const { return target == "global"; }
    // Empty when the target is not a product target.
    std::string product_id() const;

    bool operator==(const Event&) const = default;
};

enum class InputFile { global_params, population, products, events };

std::string_view to_string(InputFile file);
// Accepts "global_params", "population", "products", "events" with or without the file extension.
std::optional<InputFile> parse_input_file(std::string_view text);
// File name on disk, e.g. "products.csv".
std::string_view file_name(InputFile file);

// A single edit to a scenario input file.
//  set:    global_params -> field; tabular files -> (row, field) cell
//  append: value is an object mapping every column to its value
//  remove: row names the row key to delete
struct InputPatch {
    enum class Op { set, append, remove };

    InputFile file = InputFile::global_params;
    Op op = Op::set;
    std::string row;
    std::string field;
    nlohmann::json value;

    bool operator==(const InputPatch&) const = default;
};

nlohmann::ordered_json to_json(const InputPatch& patch);
InputPatch patch_from_json(const nlohmann::json& j);

struct ScenarioConfig {
    std::string scenario_id;
    std::string name;
    std::optional<std::string> parent;
    bool ephemeral = false;
    GlobalParams globals;
    std::vector<PopulationRow> population;
    std::vector<ProductRow> products;
    std::vector<Event> events;
    std::vector<InputPatch> patch_history;

    bool operator==(const ScenarioConfig&) const = default;
};

enum class Severity { error, warning };

struct ValidationIssue {
    Severity severity = Severity::error;
    std::string file;
    std::string locator;
    std::string message;
    std::string suggested_fix;

    bool operator==(const ValidationIssue&) const = default;
};

struct ValidationReport {
    bool ok = true;
    std::vector<ValidationIssue> issues;

    void add(ValidationIssue issue);
    std::string to_text() const;
};

nlohmann::ordered_json to_json(const ValidationReport& report);

class ValidationError : public Error {
public:
    ValidationError(std::string what, ValidationReport report)
        : Error(std::move(what)), report_(std::move(report)) {}

    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

struct FieldChoice {
    int value = 0;
    std::string meaning;
};

struct FieldDoc {
    InputFile file = InputFile::global_params;
    std::string field;
    std::string description;
    std::string type;
    std::string range;
    std::vector<FieldChoice> choices;
    std::string example;
};

nlohmann::ordered_json to_json(const FieldDoc& doc);

} // namespace simagent
