#include "simagent/platform.hpp"

#include <cstdlib>
#include <fstream>

namespace fs = std::filesystem;

namespace simagent {

fs::path resolve_data_root(const std::optional<std::string>& flag)
{
    if (flag && !flag->empty())
        return *flag;
    if (const char* env = std::getenv("SIMAGENT_DATA_ROOT"); env && *env)
        return env;
    return "simagent-data";
}

void ensure_writable(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw ConfigError("data root " + dir.string() + " cannot be created: " + ec.message());
    const fs::path probe = dir / ".write-test";
    {
        std::ofstream out(probe, std::ios::binary | std::ios::trunc);
        out << "ok\n";
        if (!out)
            throw ConfigError("data root " + dir.string() + " is not writable");
    }
    fs::remove(probe, ec);
}

fs::path Platform::prepared(const fs::path& root)
{
    ensure_writable(root);
    return root;
}

Platform::Platform(PlatformOptions options)
    : root_(prepared(options.data_root)),
      store_(root_ / "scenarios"),
      orchestrator_(store_, {root_ / "runs", options.workers, std::move(options.probe)}),
      analyzer_(store_, orchestrator_),
      sessions_(root_ / "sessions")
{
    register_builtin_tools(tools_, store_, orchestrator_, analyzer_);
}

std::shared_ptr<Planner> make_planner(const std::string& kind, const std::optional<LlmConfig>& llm)
{
    if (kind == "scripted")
        return std::make_shared<ScriptedPlanner>();
    if (kind == "llm")
        return std::make_shared<LlmPlanner>(llm.value_or(LlmConfig{}));
    throw UsageError("unknown planner '" + kind + "' (expected scripted or llm)");
}

} // namespace simagent
