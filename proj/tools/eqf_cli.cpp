// eqf: coarse simulations, saddle detection and bifurcation diagrams.
//
//   eqf simulate --config run.toml
//   eqf saddle   --config run.toml --set protocol.u0=-0.6 --out results
//   eqf trace    --config results/diagram.csv.meta.json
//   eqf eigs     --set eigs.grid_start=1 --set eigs.grid_stop=11 --set eigs.grid_step=0.25
//
// Exit codes: 0 success, 2 configuration error, 3 no convergence (or an
// aborted sweep), 4 runtime abort.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <eqf/cli.hpp>

namespace {

struct Flags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::string out;
    std::vector<std::string> sets;
};

void add_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "Config file (key = value text, or a JSON sidecar of an earlier run)");
    cmd->add_option("--seed", f.seed, "Master seed");
    cmd->add_option("--threads", f.threads, "Worker threads for ensembles (results do not depend on it)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--set", f.sets, "Override one setting, key=value (repeatable)");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Equation-free coarse saddle detection and bifurcation diagrams"};
    app.set_version_flag("--version", eqf::cli::kVersion);
    app.require_subcommand(1);

    Flags flags;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "Plain temporal run; writes series.csv"},
        {"saddle", "Run the saddle protocol; writes saddle.json and saddle_log.ndjson"},
        {"trace", "Stable and saddle branches over a parameter grid; writes diagram.csv"},
        {"eigs", "Mean-field fixed points and eigenvalues over a grid; writes eigs.csv"},
    };
    for (const auto& [name, help] : commands) add_flags(app.add_subcommand(name, help), flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : eqf::cli::kConfigError;
    }
    const std::string command = app.get_subcommands().front()->get_name();

    eqf::config::RunConfig cfg;
    try {
        if (!flags.config.empty()) cfg.load_file(flags.config);
        for (const auto& s : flags.sets) cfg.set_override(s);
        if (flags.seed) cfg.set("seed", *flags.seed, "--seed");
        if (flags.threads) cfg.set("threads", *flags.threads, "--threads");
        if (!flags.out.empty()) cfg.set("out", flags.out, "--out");
    } catch (const eqf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return eqf::cli::kConfigError;
    }
    return eqf::cli::run(command, cfg, std::cerr);
}
