#pragma once

#include "simagent/analysis.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace simagent {

enum class ParamType { string, integer, number, boolean, array, object };

std::string_view to_string(ParamType type);

struct ParamSpec {
    std::string name;
    ParamType type = ParamType::string;
    bool required = false;
    std::string description;
    std::vector<nlohmann::json> allowed; // empty = unrestricted
    std::optional<ParamType> items;      // element type for arrays
};

using ToolBinding = std::function<nlohmann::ordered_json(const nlohmann::json& args)>;

struct ToolDescriptor {
    std::string name;
    std::string description;
    std::vector<ParamSpec> params;
    // Argument names the binding reads. Must match the declared params exactly.
    std::vector<std::string> bound_params;
    ToolBinding binding;
};

// JSON schema of the parameters object, as sent to chat-completions planners.
nlohmann::ordered_json parameter_schema(const std::vector<ParamSpec>& params);
// Empty when args satisfy the schema; otherwise the first violation.
std::optional<std::string> validate_args(const std::vector<ParamSpec>& params,
                                         const nlohmann::json& args);

class ToolRegistry {
public:
    // ConflictError on duplicate names; ConfigError on empty descriptions or a binding/schema mismatch.
    void register_tool(ToolDescriptor descriptor);

    const ToolDescriptor* find(std::string_view name) const;
    const std::vector<ToolDescriptor>& tools() const { return tools_; }
    std::vector<std::string> names() const;

    // Validates then invokes. Throws UsageError for unknown tools or invalid arguments.
    nlohmann::ordered_json invoke(std::string_view name, const nlohmann::json& args) const;

private:
    std::vector<ToolDescriptor> tools_;
};

// The nine platform operations exposed to planners.
void register_builtin_tools(ToolRegistry& registry, ScenarioStore& store, Orchestrator& orchestrator,
                            Analyzer& analyzer);

// Compact run description used in tool results (no timestamps, so turns stay comparable).
nlohmann::ordered_json run_digest(const RunRecord& record);

// Default parameter set for driver ranking on a scenario.
std::vector<std::string> default_driver_parameters(const GlobalParams& globals);

} // namespace simagent
