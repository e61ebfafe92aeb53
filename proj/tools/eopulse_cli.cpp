// eopulse: batch runner for the transducer experiments.
//
//   eopulse run <config.yaml>
//   eopulse validate <config.yaml>
//   eopulse list-experiments
//
// EOPULSE_OUTPUT_DIR, when set, replaces the config's output_dir.
// Exit codes: 0 success, 1 invalid config or usage, 2 runtime failure.

#include <cstdlib>
#include <exception>
#include <iostream>
#include <string>

#include "eopulse/config.hpp"
#include "eopulse/errors.hpp"
#include "eopulse/experiments.hpp"
#include "eopulse/io.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;

void usage(std::ostream& out)
{
    out << "usage: eopulse run <config.yaml>\n"
           "       eopulse validate <config.yaml>\n"
           "       eopulse list-experiments\n"
           "\n"
           "EOPULSE_OUTPUT_DIR overrides the output_dir of the config.\n";
}

int report_config_error(const eopulse::ConfigError& e)
{
    std::cerr << "invalid config (" << e.violations().size() << " problem"
              << (e.violations().size() == 1 ? "" : "s") << "):\n";
    for (const auto& v : e.violations()) std::cerr << "  - " << v << "\n";
    return kInvalid;
}

int validate(const std::string& path)
{
    try {
        const auto cfg = eopulse::config::load_config(path);
        std::cout << path << ": ok (" << eopulse::config::to_string(cfg.experiment) << ", " << cfg.pumps.size()
                  << " pump" << (cfg.pumps.size() == 1 ? "" : "s") << ")\n";
        return kOk;
    } catch (const eopulse::ConfigError& e) {
        return report_config_error(e);
    }
}

int run(const std::string& path)
{
    eopulse::config::ExperimentConfig cfg;
    try {
        cfg = eopulse::config::load_config(path);
    } catch (const eopulse::ConfigError& e) {
        return report_config_error(e);
    }
    std::filesystem::path out = cfg.output_dir;
    if (const char* env = std::getenv("EOPULSE_OUTPUT_DIR"); env && *env) out = env;
    try {
        const auto summary = eopulse::experiments::run(cfg, out);
        std::cout << eopulse::config::to_string(cfg.experiment) << ": wrote " << summary.files.size() << " files to "
                  << out.string() << " in " << eopulse::io::format_number(summary.wall_seconds) << " s\n";
        for (const auto& g : summary.gates)
            std::cout << "  gate " << g.label << " " << g.observable << ": "
                      << eopulse::io::format_number(g.relative_change) << (g.passed ? " ok" : " FAILED") << "\n";
        return kOk;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
}

} // namespace

int main(int argc, char** argv)
{
    if (argc < 2) {
        usage(std::cerr);
        return kInvalid;
    }
    const std::string command = argv[1];
    if (command == "-h" || command == "--help" || command == "help") {
        usage(std::cout);
        return kOk;
    }
    if (command == "list-experiments" && argc == 2) {
        for (auto kind : eopulse::config::all_experiments())
            std::cout << eopulse::config::to_string(kind) << "\t" << eopulse::config::describe(kind) << "\n";
        return kOk;
    }
    if ((command == "run" || command == "validate") && argc == 3)
        return command == "run" ? run(argv[2]) : validate(argv[2]);
    usage(std::cerr);
    return kInvalid;
}
