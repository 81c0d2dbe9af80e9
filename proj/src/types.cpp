#include "simagent/types.hpp"

#include <sstream>

namespace simagent {

std::string Event::product_id() const
{
    constexpr std::string_view prefix = "product:";
    if (target.size() > prefix.size() && target.compare(0, prefix.size(), prefix) == 0)
        return target.substr(prefix.size());
    return {};
}

std::string_view to_string(InputFile file)
{
    switch (file) {
    case InputFile::global_params: return "global_params";
    case InputFile::population: return "population";
    case InputFile::products: return "products";
    case InputFile::events: return "events";
    }
    return "unknown";
}

std::string_view file_name(InputFile file)
{
    switch (file) {
    case InputFile::global_params: return "global_params.json";
    case InputFile::population: return "population.csv";
    case InputFile::products: return "products.csv";
    case InputFile::events: return "events.csv";
    }
    return "unknown";
}

std::optional<InputFile> parse_input_file(std::string_view text)
{
    for (auto file : {InputFile::global_params, InputFile::population, InputFile::products,
                      InputFile::events}) {
        if (text == to_string(file) || text == file_name(file))
            return file;
    }
    return std::nullopt;
}

nlohmann::ordered_json to_json(const InputPatch& patch)
{
    nlohmann::ordered_json j;
    j["file"] = std::string(to_string(patch.file));
    switch (patch.op) {
    case InputPatch::Op::set:
        if (patch.file != InputFile::global_params)
            j["row"] = patch.row;
        j["field"] = patch.field;
        j["value"] = patch.value;
        break;
    case InputPatch::Op::append:
        j["op"] = "append";
        j["value"] = patch.value;
        break;
    case InputPatch::Op::remove:
        j["op"] = "delete";
        j["row"] = patch.row;
        break;
    }
    return j;
}

namespace {

std::string row_key_text(const nlohmann::json& j)
{
    if (j.is_string())
        return j.get<std::string>();
    if (j.is_number_integer())
        return std::to_string(j.get<std::int64_t>());
    throw UsageError("patch row must be a string or integer");
}

} // namespace

InputPatch patch_from_json(const nlohmann::json& j)
{
    if (!j.is_object())
        throw UsageError("patch must be a JSON object");
    InputPatch patch;
    auto file_it = j.find("file");
    if (file_it == j.end() || !file_it->is_string())
        throw UsageError("patch requires a string 'file'");
    auto file = parse_input_file(file_it->get<std::string>());
    if (!file)
        throw UsageError("unknown patch file '" + file_it->get<std::string>() +
                         "' (expected global_params, population, products or events)");
    patch.file = *file;

    std::string op = j.value("op", std::string("set"));
    if (op == "set") {
        patch.op = InputPatch::Op::set;
        if (!j.contains("field") || !j["field"].is_string())
            throw UsageError("set patch requires a string 'field'");
        patch.field = j["field"].get<std::string>();
        if (patch.file != InputFile::global_params) {
            if (!j.contains("row"))
                throw UsageError("cell patch on " + std::string(file_name(patch.file)) +
                                 " requires 'row'");
            patch.row = row_key_text(j["row"]);
        }
        if (!j.contains("value"))
            throw UsageError("set patch requires 'value'");
        patch.value = j["value"];
    } else if (op == "append") {
        patch.op = InputPatch::Op::append;
        if (!j.contains("value") || !j["value"].is_object())
            throw UsageError("append patch requires an object 'value'");
        patch.value = j["value"];
    } else if (op == "delete" || op == "remove") {
        patch.op = InputPatch::Op::remove;
        if (!j.contains("row"))
            throw UsageError("delete patch requires 'row'");
        patch.row = row_key_text(j["row"]);
    } else {
        throw UsageError("unknown patch op '" + op + "' (expected set, append or delete)");
    }
    return patch;
}

void ValidationReport::add(ValidationIssue issue)
{
    if (issue.severity == Severity::error)
        ok = false;
    issues.push_back(std::move(issue));
}

std::string ValidationReport::to_text() const
{
    if (issues.empty())
        return "ok";
    std::ostringstream out;
    for (const auto& issue : issues) {
        out << (issue.severity == Severity::error ? "error" : "warning") << ": " << issue.file;
        if (!issue.locator.empty())
            out << " [" << issue.locator << "]";
        out << ": " << issue.message;
        if (!issue.suggested_fix.empty())
            out << " (" << issue.suggested_fix << ")";
        out << '\n';
    }
    return out.str();
}

nlohmann::ordered_json to_json(const ValidationReport& report)
{
    nlohmann::ordered_json j;
    j["ok"] = report.ok;
    j["issues"] = nlohmann::ordered_json::array();
    for (const auto& issue : report.issues) {
        nlohmann::ordered_json i;
        i["severity"] = issue.severity == Severity::error ? "error" : "warning";
        i["file"] = issue.file;
        i["locator"] = issue.locator;
        i["message"] = issue.message;
        i["suggested_fix"] = issue.suggested_fix;
        j["issues"].push_back(std::move(i));
    }
    return j;
}

nlohmann::ordered_json to_json(const FieldDoc& doc)
{
    nlohmann::ordered_json j;
    j["file"] = std::string(to_string(doc.file));
    j["field"] = doc.field;
    j["description"] = doc.description;
    j["type"] = doc.type;
    j["range"] = doc.range;
    if (!doc.choices.empty()) {
        j["values"] = nlohmann::ordered_json::array();
        for (const auto& c : doc.choices)
            j["values"].push_back({{"value", c.value}, {"meaning", c.meaning}});
    }
    j["example"] = doc.example;
    return j;
}

} // namespace simagent
