#include "simagent/scenario.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace simagent {

// --- field documentation and rules ----------------------------------------

const std::vector<FieldSpec>& field_specs()
{
    static const std::vector<FieldSpec> specs = [] {
        std::vector<FieldSpec> s;
        auto add = [&s](FieldSpec spec) { s.push_back(std::move(spec)); };
        using F = InputFile;
        using T = ValueType;

        add({F::global_params, "horizon_hours", T::integer, 1.0, std::nullopt, false, {}, false,
             false, "hours",
             "Number of simulated hours. Hour t runs from 0 to horizon_hours - 1; 8760 is one year "
             "of hourly steps. Changing it changes the length of every output series.",
             "8760"});
        add({F::global_params, "choice_function", T::integer, 1.0, 3.0, false,
             {{1, "argmax: each active consumer picks the option with the highest utility; ties go to "
                  "the lowest option index, so not buying wins ties"},
              {2, "multinomial logit: options are sampled with probability proportional to "
                  "exp(utility / temperature)"},
              {3, "epsilon-greedy: with probability epsilon pick uniformly among all options "
                  "(including not buying), otherwise use argmax"}},
             false, true, "",
             "Selects the decision algorithm consumers use when they consider a purchase.", "2"});
        add({F::global_params, "beta_price", T::real, std::nullopt, std::nullopt, false, {}, false,
             true, "utility per currency unit",
             "Weight of price in utility. Utility falls by beta_price for every currency unit of "
             "price, so larger values make consumers more price sensitive.",
             "0.5"});
        add({F::global_params, "beta_quality", T::real, std::nullopt, std::nullopt, false, {}, false,
             true, "utility per quality point",
             "Weight of product quality in utility. Utility rises by beta_quality per quality point.",
             "1.0"});
        add({F::global_params, "beta_digital", T::real, std::nullopt, std::nullopt, false, {}, false,
             true, "utility",
             "Bonus for digital-channel products, scaled by the consumer's digital_savviness / 10. "
             "Has no effect unless at least one product has digital_channel = 1.",
             "1.0"});
        add({F::global_params, "beta_social", T::real, std::nullopt, std::nullopt, false, {}, false,
             true, "utility per unit share",
             "Weight of a product's market share at the end of the previous hour. This is the "
             "model's reinforcing feedback loop: adoption raises share, share raises utility, "
             "utility raises adoption.",
             "2.0"});
        add({F::global_params, "u_no_purchase", T::real, std::nullopt, std::nullopt, false, {}, false,
             true, "utility",
             "Utility of not buying anything this hour (option 0). Raising it makes consumers more "
             "reluctant to adopt any product.",
             "1.0"});
        add({F::global_params, "activation_prob", T::real, 0.0, 1.0, false, {}, false, true,
             "probability per hour",
             "Probability that a consumer who has not adopted yet considers purchasing in a given "
             "hour. It sets the pace of adoption.",
             "0.01"});
        add({F::global_params, "epsilon", T::real, 0.0, 1.0, false, {}, false, true, "probability",
             "Exploration probability of the epsilon-greedy rule. Only used when choice_function = 3.",
             "0.1"});
        add({F::global_params, "temperature", T::real, 0.0, std::nullopt, true, {}, false, true, "",
             "Logit temperature. Low values approach argmax, high values approach a uniform choice. "
             "Only used when choice_function = 2.",
             "1.0"});
        add({F::global_params, "kpi_threshold_pct", T::real, 0.0, 100.0, true, {}, false, true,
             "percent of population",
             "Adoption level used by the time_to_threshold_hour KPI: the first hour at which "
             "cumulative adopters reach this percentage of the population.",
             "50"});

        add({F::population, "agent_id", T::integer, 0.0, std::nullopt, false, {}, true, false, "",
             "Unique consumer identifier. Rows must be in ascending agent_id order; consumers act "
             "in this order each hour.",
             "1"});
        add({F::population, "digital_savviness", T::integer, 1.0, 10.0, false, {}, false, false,
             "score",
             "How comfortable the consumer is with digital channels, rated 1 (not at all) to 10 "
             "(fully). It scales the beta_digital bonus of digital-channel products: a consumer "
             "with savviness 10 gets the full bonus, savviness 5 gets half.",
             "7"});

        add({F::products, "product_id", T::text, std::nullopt, std::nullopt, false, {}, true, false,
             "", "Unique product identifier used as row key and in event targets (product:<id>).",
             "P1"});
        add({F::products, "name", T::text, std::nullopt, std::nullopt, false, {}, false, false, "",
             "Display name of the product.", "Basic"});
        add({F::products, "price", T::real, 0.0, std::nullopt, false, {}, false, true,
             "currency units",
             "Purchase price. Lowers utility by beta_price per unit and is the revenue earned per "
             "adoption.",
             "5.0"});
        add({F::products, "quality", T::real, std::nullopt, std::nullopt, false, {}, false, true,
             "score", "Quality score. Raises utility by beta_quality per point.", "3.0"});
        add({F::products, "digital_channel", T::boolean, 0.0, 1.0, false,
             {{0, "sold through traditional channels; no digital bonus"},
              {1, "sold through a digital channel; earns beta_digital * digital_savviness / 10"}},
             false, true, "", "Whether the product is sold through a digital channel.", "1"});

        add({F::events, "hour", T::integer, 0.0, std::nullopt, false, {}, false, false, "hours",
             "Hour at which the change is applied, before any consumer acts in that hour. Must be "
             "below horizon_hours.",
             "100"});
        add({F::events, "target", T::text, std::nullopt, std::nullopt, false, {}, false, false, "",
             "What the event changes: 'global' for a global parameter or 'product:<product_id>'.",
             "product:P1"});
        add({F::events, "field", T::text, std::nullopt, std::nullopt, false, {}, false, false, "",
             "Parameter to change. Products: price, quality, digital_channel. Global: any global "
             "parameter except horizon_hours.",
             "price"});
        add({F::events, "value", T::real, std::nullopt, std::nullopt, false, {}, false, false, "",
             "New value; it must satisfy the target field's own rule and persists for the rest of "
             "the run.",
             "4.5"});
        return s;
    }();
    return specs;
}

const FieldSpec* find_field(InputFile file, std::string_view name)
{
    for (const auto& spec : field_specs())
        if (spec.file == file && spec.name == name)
            return &spec;
    return nullptr;
}

namespace {

std::string format_number(double value)
{
    if (value == 0.0)
        return "0";
    std::array<char, 64> buf{};
    auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    return std::string(buf.data(), ptr);
}

std::string type_name(ValueType type)
{
    switch (type) {
    case ValueType::integer: return "integer";
    case ValueType::real: return "real";
    case ValueType::boolean: return "boolean (0 or 1)";
    case ValueType::text: return "string";
    }
    return "unknown";
}

std::string range_text(const FieldSpec& spec)
{
    if (!spec.choices.empty()) {
        std::string out = "{";
        for (std::size_t i = 0; i < spec.choices.size(); ++i)
            out += (i ? "," : "") + std::to_string(spec.choices[i].value);
        return out + "}";
    }
    if (spec.type == ValueType::text)
        return "text without commas";
    if (spec.type == ValueType::integer) {
        if (spec.min && spec.max)
            return format_number(*spec.min) + ".." + format_number(*spec.max);
        if (spec.min)
            return ">= " + format_number(*spec.min);
        return "any integer";
    }
    if (spec.min && spec.max)
        return std::string(spec.min_exclusive ? "(" : "[") + format_number(*spec.min) + ", " +
               format_number(*spec.max) + "]";
    if (spec.min)
        return (spec.min_exclusive ? "> " : ">= ") + format_number(*spec.min);
    return "any finite number";
}

std::string choices_text(const FieldSpec& spec)
{
    std::string out;
    for (std::size_t i = 0; i < spec.choices.size(); ++i) {
        const auto& meaning = spec.choices[i].meaning;
        out += (i ? ", " : "") + std::to_string(spec.choices[i].value) + " = " +
               meaning.substr(0, meaning.find(':'));
    }
    return out;
}

} // namespace

std::optional<std::string> check_value(const FieldSpec& spec, double value)
{
    const std::string got = "; got " + format_number(value);
    if (!std::isfinite(value))
        return spec.name + " must be a finite number" + got;
    if (spec.type == ValueType::text)
        return std::nullopt;
    const bool integral = std::floor(value) == value;
    if (!spec.choices.empty()) {
        bool found = false;
        for (const auto& c : spec.choices)
            found = found || value == static_cast<double>(c.value);
        if (!found)
            return spec.name + " must be one of " + range_text(spec) + " (" + choices_text(spec) +
                   ")" + got;
        return std::nullopt;
    }
    if (spec.type == ValueType::integer) {
        bool in_range = integral && (!spec.min || value >= *spec.min) && (!spec.max || value <= *spec.max);
        if (!in_range)
            return spec.name + " must be an integer in range " + range_text(spec) + got;
        return std::nullopt;
    }
    bool low_ok = !spec.min || (spec.min_exclusive ? value > *spec.min : value >= *spec.min);
    bool high_ok = !spec.max || value <= *spec.max;
    if (!low_ok || !high_ok)
        return spec.name + " must be in " + range_text(spec) + got;
    return std::nullopt;
}

namespace {

std::string suggested_fix(const FieldSpec& spec)
{
    if (!spec.choices.empty())
        return "use one of " + range_text(spec) + ": " + choices_text(spec);
    return "use a value in " + range_text(spec);
}

} // namespace

FieldDoc describe_field(InputFile file, std::string_view field)
{
    const FieldSpec* spec = find_field(file, field);
    if (!spec) {
        std::string known;
        for (const auto& s : field_specs())
            if (s.file == file)
                known += (known.empty() ? "" : ", ") + s.name;
        throw NotFoundError(std::string(file_name(file)) + ": unknown field '" + std::string(field) +
                            "'; documented fields: " + known);
    }
    FieldDoc doc;
    doc.file = file;
    doc.field = spec->name;
    doc.description = spec->description;
    doc.type = type_name(spec->type);
    doc.range = range_text(*spec);
    if (!spec->unit.empty())
        doc.range += " (" + spec->unit + ")";
    doc.choices = spec->choices;
    doc.example = spec->example;
    return doc;
}

std::vector<FieldDoc> all_field_docs()
{
    std::vector<FieldDoc> docs;
    for (const auto& spec : field_specs())
        docs.push_back(describe_field(spec.file, spec.name));
    return docs;
}

double global_value(const GlobalParams& g, std::string_view field)
{
    if (field == "horizon_hours") return static_cast<double>(g.horizon_hours);
    if (field == "choice_function") return g.choice_function;
    if (field == "beta_price") return g.beta_price;
    if (field == "beta_quality") return g.beta_quality;
    if (field == "beta_digital") return g.beta_digital;
    if (field == "beta_social") return g.beta_social;
    if (field == "u_no_purchase") return g.u_no_purchase;
    if (field == "activation_prob") return g.activation_prob;
    if (field == "epsilon") return g.epsilon;
    if (field == "temperature") return g.temperature;
    if (field == "kpi_threshold_pct") return g.kpi_threshold_pct;
    throw NotFoundError("global_params.json: unknown field '" + std::string(field) + "'");
}

void set_global_value(GlobalParams& g, std::string_view field, double v)
{
    if (field == "horizon_hours") g.horizon_hours = static_cast<std::int64_t>(v);
    else if (field == "choice_function") g.choice_function = static_cast<int>(v);
    else if (field == "beta_price") g.beta_price = v;
    else if (field == "beta_quality") g.beta_quality = v;
    else if (field == "beta_digital") g.beta_digital = v;
    else if (field == "beta_social") g.beta_social = v;
    else if (field == "u_no_purchase") g.u_no_purchase = v;
    else if (field == "activation_prob") g.activation_prob = v;
    else if (field == "epsilon") g.epsilon = v;
    else if (field == "temperature") g.temperature = v;
    else if (field == "kpi_threshold_pct") g.kpi_threshold_pct = v;
    else throw NotFoundError("global_params.json: unknown field '" + std::string(field) + "'");
}

// --- rendering ------------------------------------------------------------

std::string render_global_params(const GlobalParams& g)
{
    ordered_json j;
    for (const auto& spec : field_specs()) {
        if (spec.file != InputFile::global_params)
            continue;
        double v = global_value(g, spec.name);
        if (spec.type == ValueType::integer)
            j[spec.name] = static_cast<std::int64_t>(v);
        else
            j[spec.name] = v;
    }
    return j.dump(2) + "\n";
}

std::string render_population(const std::vector<PopulationRow>& rows)
{
    std::string out = "agent_id,digital_savviness\n";
    for (const auto& r : rows)
        out += std::to_string(r.agent_id) + "," + std::to_string(r.digital_savviness) + "\n";
    return out;
}

std::string render_products(const std::vector<ProductRow>& rows)
{
    std::string out = "product_id,name,price,quality,digital_channel\n";
    for (const auto& r : rows)
        out += r.product_id + "," + r.name + "," + format_number(r.price) + "," +
               format_number(r.quality) + "," + (r.digital_channel ? "1" : "0") + "\n";
    return out;
}

std::string render_events(const std::vector<Event>& rows)
{
    std::string out = "hour,target,field,value\n";
    for (const auto& e : rows)
        out += std::to_string(e.hour) + "," + e.target + "," + e.field + "," +
               format_number(e.value) + "\n";
    return out;
}

std::string render_meta(const ScenarioConfig& c)
{
    ordered_json j;
    j["scenario_id"] = c.scenario_id;
    j["name"] = c.name;
    j["parent"] = c.parent ? ordered_json(*c.parent) : ordered_json(nullptr);
    j["patch_history"] = ordered_json::array();
    for (const auto& p : c.patch_history)
        j["patch_history"].push_back(to_json(p));
    if (c.ephemeral)
        j["ephemeral"] = true;
    return j.dump(2) + "\n";
}

std::string render_file(const ScenarioConfig& c, InputFile file)
{
    switch (file) {
    case InputFile::global_params: return render_global_params(c.globals);
    case InputFile::population: return render_population(c.population);
    case InputFile::products: return render_products(c.products);
    case InputFile::events: return render_events(c.events);
    }
    return {};
}

// --- parsing --------------------------------------------------------------

namespace {

std::string read_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ParseError(path.filename().string() + " not found in " + path.parent_path().string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split(std::string_view line, char sep)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

// Data rows of a CSV with a fixed header, paired with 1-based line numbers.
std::vector<std::pair<std::size_t, std::vector<std::string>>>
read_csv(const fs::path& path, std::string_view header)
{
    const std::string name = path.filename().string();
    std::istringstream in(read_file(path));
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::pair<std::size_t, std::vector<std::string>>> rows;
    const auto columns = split(header, ',').size();
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (!saw_header) {
            if (line != header)
                throw ParseError(name + ":1: expected header '" + std::string(header) + "'");
            saw_header = true;
            continue;
        }
        if (line.empty())
            continue;
        auto cells = split(line, ',');
        if (cells.size() != columns)
            throw ParseError(name + ":" + std::to_string(line_no) + ": malformed row, expected " +
                             std::to_string(columns) + " columns but found " +
                             std::to_string(cells.size()));
        rows.emplace_back(line_no, std::move(cells));
    }
    if (!saw_header)
        throw ParseError(name + ": empty file, expected header '" + std::string(header) + "'");
    return rows;
}

double parse_real(const std::string& text, const std::string& where)
{
    double value = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
        throw ParseError(where + ": '" + text + "' is not a number");
    return value;
}

std::int64_t parse_int(const std::string& text, const std::string& where)
{
    std::int64_t value = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
        throw ParseError(where + ": '" + text + "' is not an integer");
    return value;
}

std::string where(const fs::path& path, std::size_t line, std::string_view column)
{
    return path.filename().string() + ":" + std::to_string(line) + ": " + std::string(column);
}

GlobalParams parse_global_params(const fs::path& path)
{
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError("global_params.json: invalid JSON: " + std::string(e.what()));
    }
    if (!j.is_object())
        throw ParseError("global_params.json: expected a flat JSON object");
    GlobalParams g;
    for (const auto& spec : field_specs()) {
        if (spec.file != InputFile::global_params)
            continue;
        auto it = j.find(spec.name);
        if (it == j.end())
            throw ParseError("global_params.json: missing field '" + spec.name + "'");
        if (!it->is_number())
            throw ParseError("global_params.json: field '" + spec.name + "' must be a number");
        double v = it->get<double>();
        if (spec.type == ValueType::integer) {
            if (std::floor(v) != v || std::fabs(v) > 9.0e15)
                throw ParseError("global_params.json: field '" + spec.name + "' must be an integer");
            if (spec.name == "choice_function" && std::fabs(v) > std::numeric_limits<int>::max())
                throw ParseError("global_params.json: field 'choice_function' is out of range");
        }
        set_global_value(g, spec.name, v);
    }
    for (const auto& [key, value] : j.items())
        if (!find_field(InputFile::global_params, key))
            throw ParseError("global_params.json: unknown field '" + key + "'");
    return g;
}

void parse_meta(const fs::path& path, ScenarioConfig& c)
{
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ParseError("scenario_meta.json: invalid JSON: " + std::string(e.what()));
    }
    try {
        c.scenario_id = j.at("scenario_id").get<std::string>();
        c.name = j.at("name").get<std::string>();
        if (j.contains("parent") && !j["parent"].is_null())
            c.parent = j["parent"].get<std::string>();
        c.ephemeral = j.value("ephemeral", false);
        for (const auto& p : j.value("patch_history", json::array()))
            c.patch_history.push_back(patch_from_json(p));
    } catch (const json::exception& e) {
        throw ParseError("scenario_meta.json: " + std::string(e.what()));
    } catch (const UsageError& e) {
        throw ParseError("scenario_meta.json: patch_history: " + std::string(e.what()));
    }
}

} // namespace

ScenarioConfig load_scenario(const fs::path& dir)
{
    if (!fs::is_directory(dir))
        throw NotFoundError("scenario directory " + dir.string() + " not found");
    for (auto name : {"global_params.json", "population.csv", "products.csv", "events.csv",
                      "scenario_meta.json"})
        if (!fs::exists(dir / name))
            throw ParseError(std::string(name) + " not found in " + dir.string());

    ScenarioConfig c;
    parse_meta(dir / "scenario_meta.json", c);
    c.globals = parse_global_params(dir / "global_params.json");

    std::set<std::int64_t> agent_ids;
    for (auto& [line, cells] : read_csv(dir / "population.csv", "agent_id,digital_savviness")) {
        const auto path = dir / "population.csv";
        PopulationRow row;
        row.agent_id = parse_int(cells[0], where(path, line, "agent_id"));
        auto ds = parse_int(cells[1], where(path, line, "digital_savviness"));
        if (ds < std::numeric_limits<int>::min() || ds > std::numeric_limits<int>::max())
            throw ParseError(where(path, line, "digital_savviness") + " out of range");
        row.digital_savviness = static_cast<int>(ds);
        if (!agent_ids.insert(row.agent_id).second)
            throw ParseError("population.csv: duplicate agent_id " + std::to_string(row.agent_id) +
                             " (line " + std::to_string(line) + ")");
        c.population.push_back(row);
    }

    std::set<std::string> product_ids;
    for (auto& [line, cells] :
         read_csv(dir / "products.csv", "product_id,name,price,quality,digital_channel")) {
        const auto path = dir / "products.csv";
        ProductRow row;
        row.product_id = cells[0];
        row.name = cells[1];
        row.price = parse_real(cells[2], where(path, line, "price"));
        row.quality = parse_real(cells[3], where(path, line, "quality"));
        if (cells[4] != "0" && cells[4] != "1")
            throw ParseError(where(path, line, "digital_channel") + " must be 0 or 1");
        row.digital_channel = cells[4] == "1";
        if (!product_ids.insert(row.product_id).second)
            throw ParseError("products.csv: duplicate product_id " + row.product_id + " (line " +
                             std::to_string(line) + ")");
        c.products.push_back(std::move(row));
    }

    for (auto& [line, cells] : read_csv(dir / "events.csv", "hour,target,field,value")) {
        const auto path = dir / "events.csv";
        Event e;
        e.hour = parse_int(cells[0], where(path, line, "hour"));
        e.target = cells[1];
        e.field = cells[2];
        e.value = parse_real(cells[3], where(path, line, "value"));
        c.events.push_back(std::move(e));
    }
    return c;
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

// Writes through a temporary sibling and renames into place.
void commit_text(const fs::path& path, const std::string& text)
{
    auto tmp = path.parent_path() / ("." + path.filename().string() + ".tmp");
    write_text(tmp, text);
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

} // namespace

void write_scenario(const ScenarioConfig& c, const fs::path& dir)
{
    fs::create_directories(dir);
    commit_text(dir / "global_params.json", render_global_params(c.globals));
    commit_text(dir / "population.csv", render_population(c.population));
    commit_text(dir / "products.csv", render_products(c.products));
    commit_text(dir / "events.csv", render_events(c.events));
    commit_text(dir / "scenario_meta.json", render_meta(c));
}

// --- validation -----------------------------------------------------------

namespace {

bool valid_identifier(const std::string& id)
{
    if (id.empty())
        return false;
    return std::all_of(id.begin(), id.end(), [](unsigned char ch) {
        return std::isalnum(ch) || ch == '_' || ch == '-' || ch == '.';
    });
}

ValidationIssue error_issue(InputFile file, std::string locator, std::string message,
                            std::string fix = {})
{
    return {Severity::error, std::string(file_name(file)), std::move(locator), std::move(message),
            std::move(fix)};
}

} // namespace

ValidationReport validate(const ScenarioConfig& c)
{
    ValidationReport report;

    for (const auto& spec : field_specs()) {
        if (spec.file != InputFile::global_params)
            continue;
        if (auto msg = check_value(spec, global_value(c.globals, spec.name)))
            report.add(error_issue(InputFile::global_params, spec.name, *msg, suggested_fix(spec)));
    }

    if (c.population.empty())
        report.add(error_issue(InputFile::population, "", "population is empty",
                               "add at least one agent row"));
    const FieldSpec& ds_spec = *find_field(InputFile::population, "digital_savviness");
    const FieldSpec& id_spec = *find_field(InputFile::population, "agent_id");
    for (std::size_t i = 0; i < c.population.size(); ++i) {
        const auto& row = c.population[i];
        const std::string loc = "agent " + std::to_string(row.agent_id);
        if (auto msg = check_value(ds_spec, row.digital_savviness))
            report.add(error_issue(InputFile::population, loc + ", digital_savviness", *msg,
                                   suggested_fix(ds_spec)));
        if (auto msg = check_value(id_spec, static_cast<double>(row.agent_id)))
            report.add(error_issue(InputFile::population, loc + ", agent_id", *msg,
                                   suggested_fix(id_spec)));
        if (i > 0 && row.agent_id <= c.population[i - 1].agent_id)
            report.add(error_issue(InputFile::population, loc + ", agent_id",
                                   "agent_id values must be unique and ascending; " +
                                       std::to_string(row.agent_id) + " follows " +
                                       std::to_string(c.population[i - 1].agent_id),
                                   "sort rows by agent_id and remove duplicates"));
    }

    if (c.products.empty())
        report.add(error_issue(InputFile::products, "", "no products defined",
                               "add at least one product row"));
    std::set<std::string> product_ids;
    for (const auto& p : c.products) {
        const std::string loc = "product " + p.product_id;
        if (!valid_identifier(p.product_id))
            report.add(error_issue(InputFile::products, loc + ", product_id",
                                   "product_id must be non-empty and use only letters, digits, "
                                   "'_', '-' or '.'"));
        if (!product_ids.insert(p.product_id).second)
            report.add(error_issue(InputFile::products, loc + ", product_id",
                                   "duplicate product_id " + p.product_id));
        if (p.name.find_first_of(",\n\r\"") != std::string::npos)
            report.add(error_issue(InputFile::products, loc + ", name",
                                   "name must not contain commas, quotes or line breaks"));
        for (auto field : {"price", "quality"}) {
            const FieldSpec& spec = *find_field(InputFile::products, field);
            double v = std::string_view(field) == "price" ? p.price : p.quality;
            if (auto msg = check_value(spec, v))
                report.add(error_issue(InputFile::products, loc + ", " + field, *msg,
                                       suggested_fix(spec)));
        }
    }

    for (std::size_t i = 0; i < c.events.size(); ++i) {
        const auto& e = c.events[i];
        const std::string loc = "row " + std::to_string(i);
        if (e.hour < 0 || e.hour >= c.globals.horizon_hours)
            report.add(error_issue(InputFile::events, loc + ", hour",
                                   "event hour " + std::to_string(e.hour) + " is outside [0, " +
                                       std::to_string(c.globals.horizon_hours) + ")",
                                   "use an hour below horizon_hours"));
        const FieldSpec* target_spec = nullptr;
        if (e.is_global()) {
            if (e.field == "horizon_hours") {
                report.add(error_issue(InputFile::events, loc + ", field",
                                       "horizon_hours cannot be changed by an event",
                                       "edit horizon_hours in global_params.json instead"));
                continue;
            }
            target_spec = find_field(InputFile::global_params, e.field);
        } else if (auto pid = e.product_id(); !pid.empty()) {
            if (!product_ids.count(pid)) {
                report.add(error_issue(InputFile::events, loc + ", target",
                                       "event target " + e.target + " names no existing product"));
                continue;
            }
            target_spec = find_field(InputFile::products, e.field);
        } else {
            report.add(error_issue(InputFile::events, loc + ", target",
                                   "event target must be 'global' or 'product:<product_id>'; got '" +
                                       e.target + "'"));
            continue;
        }
        if (!target_spec || !target_spec->event_mutable) {
            report.add(error_issue(InputFile::events, loc + ", field",
                                   "'" + e.field + "' is not a parameter an event can change on " +
                                       e.target,
                                   e.is_global() ? "use a global parameter other than horizon_hours"
                                                 : "use price, quality or digital_channel"));
            continue;
        }
        if (auto msg = check_value(*target_spec, e.value))
            report.add(error_issue(InputFile::events, loc + ", value", *msg,
                                   suggested_fix(*target_spec)));
    }
    return report;
}

// --- patching -------------------------------------------------------------

namespace {

std::string context(InputFile file, std::string_view field)
{
    return std::string(file_name(file)) + ": " + std::string(field);
}

double to_real(const json& v, const std::string& ctx)
{
    if (!v.is_number() || v.is_boolean())
        throw UsageError(ctx + " expects a number, got " + v.dump());
    return v.get<double>();
}

std::int64_t to_integer(const json& v, const std::string& ctx)
{
    if (v.is_number_integer())
        return v.get<std::int64_t>();
    if (v.is_number_float()) {
        double d = v.get<double>();
        if (std::floor(d) == d && std::fabs(d) < 9.0e15)
            return static_cast<std::int64_t>(d);
    }
    throw UsageError(ctx + " expects an integer, got " + v.dump());
}

int to_int32(const json& v, const std::string& ctx)
{
    auto i = to_integer(v, ctx);
    if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max())
        throw UsageError(ctx + " value " + std::to_string(i) + " is out of range");
    return static_cast<int>(i);
}

bool to_bool(const json& v, const std::string& ctx)
{
    if (v.is_boolean())
        return v.get<bool>();
    if (v.is_number_integer() || v.is_number_float()) {
        double d = v.get<double>();
        if (d == 0.0 || d == 1.0)
            return d == 1.0;
    }
    throw UsageError(ctx + " expects 0 or 1, got " + v.dump());
}

std::string to_text(const json& v, const std::string& ctx)
{
    if (!v.is_string())
        throw UsageError(ctx + " expects a string, got " + v.dump());
    return v.get<std::string>();
}

void set_product_field(ProductRow& p, const std::string& field, const json& v)
{
    const auto ctx = context(InputFile::products, field);
    if (field == "name") p.name = to_text(v, ctx);
    else if (field == "price") p.price = to_real(v, ctx);
    else if (field == "quality") p.quality = to_real(v, ctx);
    else if (field == "digital_channel") p.digital_channel = to_bool(v, ctx);
    else throw NotFoundError("products.csv: unknown column '" + field + "'");
}

void set_event_field(Event& e, const std::string& field, const json& v)
{
    const auto ctx = context(InputFile::events, field);
    if (field == "hour") e.hour = to_integer(v, ctx);
    else if (field == "target") e.target = to_text(v, ctx);
    else if (field == "field") e.field = to_text(v, ctx);
    else if (field == "value") e.value = v.is_boolean() ? (v.get<bool>() ? 1.0 : 0.0) : to_real(v, ctx);
    else throw NotFoundError("events.csv: unknown column '" + field + "'");
}

const json& column(const json& row, std::string_view file, const char* name)
{
    auto it = row.find(name);
    if (it == row.end())
        throw UsageError(std::string(file) + ": appended row is missing column '" + name + "'");
    return *it;
}

void reject_extra_columns(const json& row, InputFile file)
{
    for (const auto& [key, value] : row.items())
        if (!find_field(file, key))
            throw UsageError(std::string(file_name(file)) + ": unknown column '" + key + "'");
}

std::size_t event_index(const ScenarioConfig& c, const std::string& row)
{
    std::size_t idx = 0;
    auto [ptr, ec] = std::from_chars(row.data(), row.data() + row.size(), idx);
    if (ec != std::errc() || ptr != row.data() + row.size() || row.empty() || idx >= c.events.size())
        throw NotFoundError("events.csv: no row " + row);
    return idx;
}

} // namespace

void apply_patch_to(ScenarioConfig& c, const InputPatch& patch)
{
    const auto fname = std::string(file_name(patch.file));
    switch (patch.file) {
    case InputFile::global_params: {
        if (patch.op != InputPatch::Op::set)
            throw UsageError("global_params.json has no rows; only field updates are allowed");
        if (patch.field == "scenario_id" || patch.field == "name" || patch.field == "parent")
            throw ConflictError("global_params.json: '" + patch.field +
                                "' is scenario metadata and cannot be patched");
        const FieldSpec* spec = find_field(InputFile::global_params, patch.field);
        if (!spec)
            throw NotFoundError("global_params.json: unknown field '" + patch.field + "'");
        const auto ctx = context(patch.file, patch.field);
        double v = spec->type == ValueType::integer
                       ? static_cast<double>(patch.field == "choice_function"
                                                 ? to_int32(patch.value, ctx)
                                                 : to_integer(patch.value, ctx))
                       : to_real(patch.value, ctx);
        set_global_value(c.globals, patch.field, v);
        return;
    }
    case InputFile::population: {
        if (patch.op == InputPatch::Op::append) {
            reject_extra_columns(patch.value, patch.file);
            PopulationRow row;
            row.agent_id = to_integer(column(patch.value, fname, "agent_id"),
                                      context(patch.file, "agent_id"));
            row.digital_savviness = to_int32(column(patch.value, fname, "digital_savviness"),
                                             context(patch.file, "digital_savviness"));
            c.population.push_back(row);
            return;
        }
        auto it = std::find_if(c.population.begin(), c.population.end(), [&](const auto& r) {
            return std::to_string(r.agent_id) == patch.row;
        });
        if (it == c.population.end())
            throw NotFoundError("population.csv: no row " + patch.row);
        if (patch.op == InputPatch::Op::remove) {
            c.population.erase(it);
            return;
        }
        if (patch.field == "agent_id")
            throw ConflictError("population.csv: agent_id is the row key and cannot be patched");
        if (patch.field != "digital_savviness")
            throw NotFoundError("population.csv: unknown column '" + patch.field + "'");
        it->digital_savviness = to_int32(patch.value, context(patch.file, patch.field));
        return;
    }
    case InputFile::products: {
        if (patch.op == InputPatch::Op::append) {
            reject_extra_columns(patch.value, patch.file);
            ProductRow row;
            row.product_id = to_text(column(patch.value, fname, "product_id"),
                                     context(patch.file, "product_id"));
            if (std::any_of(c.products.begin(), c.products.end(),
                            [&](const auto& p) { return p.product_id == row.product_id; }))
                throw ConflictError("products.csv: product " + row.product_id + " already exists");
            for (auto col : {"name", "price", "quality", "digital_channel"})
                set_product_field(row, col, column(patch.value, fname, col));
            c.products.push_back(std::move(row));
            return;
        }
        auto it = std::find_if(c.products.begin(), c.products.end(),
                               [&](const auto& p) { return p.product_id == patch.row; });
        if (it == c.products.end())
            throw NotFoundError("products.csv: no row " + patch.row);
        if (patch.op == InputPatch::Op::remove) {
            c.products.erase(it);
            return;
        }
        if (patch.field == "product_id")
            throw ConflictError("products.csv: product_id is the row key and cannot be patched");
        set_product_field(*it, patch.field, patch.value);
        return;
    }
    case InputFile::events: {
        if (patch.op == InputPatch::Op::append) {
            reject_extra_columns(patch.value, patch.file);
            Event e;
            for (auto col : {"hour", "target", "field", "value"})
                set_event_field(e, col, column(patch.value, fname, col));
            c.events.push_back(std::move(e));
            return;
        }
        auto idx = event_index(c, patch.row);
        if (patch.op == InputPatch::Op::remove) {
            c.events.erase(c.events.begin() + static_cast<std::ptrdiff_t>(idx));
            return;
        }
        set_event_field(c.events[idx], patch.field, patch.value);
        return;
    }
    }
}

// --- identity -------------------------------------------------------------

std::string fingerprint(const ScenarioConfig& c)
{
    std::string payload;
    for (auto file : {InputFile::global_params, InputFile::population, InputFile::products,
                      InputFile::events}) {
        payload += file_name(file);
        payload.push_back('\0');
        payload += render_file(c, file);
        payload.push_back('\0');
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(payload.data(), payload.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error("sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string slugify(std::string_view name)
{
    std::string out;
    bool dash = false;
    for (unsigned char ch : name) {
        if (std::isalnum(ch)) {
            if (dash && !out.empty())
                out.push_back('-');
            dash = false;
            out.push_back(static_cast<char>(std::tolower(ch)));
        } else {
            dash = true;
        }
    }
    return out;
}

ScenarioConfig make_baseline(const BaselineOptions& options)
{
    ScenarioConfig c;
    c.scenario_id = "baseline";
    c.name = "Baseline";
    c.globals.horizon_hours = options.horizon_hours;
    c.globals.choice_function = 2;
    c.globals.beta_price = 0.5;
    c.globals.beta_quality = 1.0;
    c.globals.beta_digital = 1.0;
    c.globals.beta_social = 2.0;
    c.globals.u_no_purchase = 1.0;
    c.globals.activation_prob = 0.01;
    c.globals.epsilon = 0.1;
    c.globals.temperature = 1.0;
    c.globals.kpi_threshold_pct = 50.0;

    std::mt19937_64 gen(options.seed);
    for (std::size_t i = 0; i < options.agents; ++i)
        c.population.push_back({static_cast<std::int64_t>(i + 1), static_cast<int>(1 + gen() % 10)});

    c.products = {
        {"P1", "Basic", 5.0, 3.0, false},
        {"P2", "Premium", 9.0, 6.0, true},
        {"P3", "Online", 6.0, 4.0, true},
    };
    return c;
}

// --- store ----------------------------------------------------------------

ScenarioStore::ScenarioStore(fs::path root) : root_(std::move(root))
{
    fs::create_directories(root_);
}

fs::path ScenarioStore::directory(std::string_view id) const
{
    return root_ / std::string(id);
}

namespace {

void require_slug(std::string_view id)
{
    if (id.empty() || slugify(id) != id)
        throw NotFoundError("unknown scenario '" + std::string(id) + "'");
}

} // namespace

bool ScenarioStore::exists(std::string_view id) const
{
    if (id.empty() || slugify(id) != id)
        return false;
    return fs::exists(directory(id) / "scenario_meta.json");
}

std::shared_mutex& ScenarioStore::lock_for(std::string_view id) const
{
    std::lock_guard guard(table_mutex_);
    auto it = locks_.find(id);
    if (it == locks_.end())
        it = locks_.emplace(std::string(id), std::make_unique<std::shared_mutex>()).first;
    return *it->second;
}

ScenarioConfig ScenarioStore::load(std::string_view id) const
{
    require_slug(id);
    std::shared_lock lock(lock_for(id));
    if (!exists(id))
        throw NotFoundError("unknown scenario '" + std::string(id) + "'");
    return load_scenario(directory(id));
}

ScenarioConfig ScenarioStore::load_and_pin(std::string_view id)
{
    require_slug(id);
    std::shared_lock lock(lock_for(id));
    if (!exists(id))
        throw NotFoundError("unknown scenario '" + std::string(id) + "'");
    ScenarioConfig config = load_scenario(directory(id));
    pin(id);
    return config;
}

std::vector<ScenarioInfo> ScenarioStore::list(bool include_ephemeral) const
{
    std::vector<ScenarioInfo> out;
    if (!fs::exists(root_))
        return out;
    for (const auto& entry : fs::directory_iterator(root_)) {
        const auto id = entry.path().filename().string();
        if (!entry.is_directory() || id.empty() || id.front() == '.' || !exists(id))
            continue;
        std::shared_lock lock(lock_for(id));
        ScenarioConfig meta;
        try {
            parse_meta(entry.path() / "scenario_meta.json", meta);
        } catch (const ParseError&) {
            continue;
        }
        if (meta.ephemeral && !include_ephemeral)
            continue;
        out.push_back({id, meta.name, meta.parent});
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.scenario_id < b.scenario_id; });
    return out;
}

void ScenarioStore::create(const ScenarioConfig& config)
{
    if (config.scenario_id.empty() || slugify(config.scenario_id) != config.scenario_id)
        throw UsageError("scenario id '" + config.scenario_id + "' is not a lowercase slug");
    std::lock_guard guard(derive_mutex_);
    if (exists(config.scenario_id))
        throw ConflictError("scenario '" + config.scenario_id + "' already exists");
    auto tmp = root_ / (".tmp-" + config.scenario_id + "-" + std::to_string(++temp_counter_));
    fs::remove_all(tmp);
    write_scenario(config, tmp);
    std::error_code ec;
    fs::rename(tmp, directory(config.scenario_id), ec);
    if (ec) {
        fs::remove_all(tmp);
        throw IoError("cannot create scenario '" + config.scenario_id + "': " + ec.message());
    }
}

void ScenarioStore::require_unpinned(std::string_view id) const
{
    if (pinned(id))
        throw ConflictError("scenario '" + std::string(id) +
                            "' is referenced by a queued or running run; derive a new scenario "
                            "instead");
}

ValidationReport ScenarioStore::apply_patch(std::string_view id, const InputPatch& patch)
{
    require_slug(id);
    std::unique_lock lock(lock_for(id));
    if (!exists(id))
        throw NotFoundError("unknown scenario '" + std::string(id) + "'");
    require_unpinned(id);
    ScenarioConfig config = load_scenario(directory(id));
    apply_patch_to(config, patch);
    ValidationReport report = validate(config);
    if (!report.ok)
        return report;
    config.patch_history.push_back(patch);
    const auto dir = directory(id);
    commit_text(dir / std::string(file_name(patch.file)), render_file(config, patch.file));
    commit_text(dir / "scenario_meta.json", render_meta(config));
    return report;
}

std::string ScenarioStore::derive(std::string_view base_id, std::string_view new_name,
                                  const std::vector<InputPatch>& patches, bool ephemeral)
{
    const std::string id = slugify(new_name);
    if (id.empty())
        throw UsageError("scenario name '" + std::string(new_name) + "' has no usable characters");
    ScenarioConfig config = load(base_id);
    config.scenario_id = id;
    config.name = std::string(new_name);
    config.parent = std::string(base_id);
    config.ephemeral = ephemeral;
    config.patch_history.clear();
    for (const auto& patch : patches)
        apply_patch_to(config, patch);
    ValidationReport report = validate(config);
    if (!report.ok)
        throw ValidationError("derived scenario '" + id + "' does not validate:\n" + report.to_text(),
                              report);
    config.patch_history = patches;
    create(config);
    return id;
}

void ScenarioStore::remove(std::string_view id)
{
    require_slug(id);
    std::unique_lock lock(lock_for(id));
    if (!exists(id))
        throw NotFoundError("unknown scenario '" + std::string(id) + "'");
    require_unpinned(id);
    fs::remove_all(directory(id));
}

void ScenarioStore::pin(std::string_view id)
{
    std::lock_guard guard(table_mutex_);
    auto it = pins_.find(id);
    if (it == pins_.end())
        pins_.emplace(std::string(id), 1);
    else
        ++it->second;
}

void ScenarioStore::unpin(std::string_view id)
{
    std::lock_guard guard(table_mutex_);
    auto it = pins_.find(id);
    if (it != pins_.end() && --it->second <= 0)
        pins_.erase(it);
}

bool ScenarioStore::pinned(std::string_view id) const
{
    std::lock_guard guard(table_mutex_);
    return pins_.count(id) > 0;
}

} // namespace simagent
