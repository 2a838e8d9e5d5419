#pragma once

// Subcommands of the eqf tool: simulate, saddle, trace, eigs. Each writes its
// data files plus a <file>.meta.json sidecar holding the resolved
// configuration; running again with --config <sidecar> reproduces the data.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "agents.hpp"
#include "coarse.hpp"
#include "config.hpp"
#include "continuation.hpp"
#include "io.hpp"
#include "kmc.hpp"
#include "meanfield.hpp"
#include "protocol.hpp"

namespace eqf::cli {

using json = nlohmann::json;
using config::RunConfig;

enum ExitCode : int { kOk = 0, kConfigError = 2, kNotConverged = 3, kRuntimeAbort = 4 };

inline constexpr const char* kVersion = "0.1.0";

struct Context {
    std::string command;
    RunConfig cfg;
    json resolved;
    std::filesystem::path out_dir;
    std::vector<std::string> outputs;
    std::ostream* log = nullptr;
};

inline void note(const Context& ctx, const std::string& msg) {
    if (ctx.log) *ctx.log << msg << '\n';
}

inline std::ofstream open_in(Context& ctx, const std::string& name) {
    std::filesystem::create_directories(ctx.out_dir);
    const auto path = (ctx.out_dir / name).string();
    ctx.outputs.push_back(path);
    return io::open_output(path);
}

inline void write_sidecar(const Context& ctx, const std::string& name, const json& results = json::object()) {
    json meta;
    meta["command"] = ctx.command;
    meta["config"] = ctx.resolved;
    meta["seed"] = ctx.resolved.at("seed");
    meta["file"] = name;
    meta["eqf_version"] = kVersion;
    if (!results.empty()) meta["results"] = results;
    auto f = io::open_output((ctx.out_dir / (name + ".meta.json")).string());
    f << meta.dump(2) << '\n';
}

inline EnsembleSpec ensemble(const RunConfig& cfg) {
    EnsembleSpec e;
    e.n_realizations = cfg.get<std::size_t>("ensemble.n_realizations");
    e.base_seed = cfg.get<std::uint64_t>("seed");
    e.threads = static_cast<unsigned>(std::max<std::uint64_t>(1, cfg.get<std::uint64_t>("threads")));
    return e;
}

inline CoarseState state(const RunConfig& cfg, const std::string& key, const std::vector<std::string>& labels) {
    const auto v = cfg.get<std::vector<double>>(key);
    if (v.size() != labels.size())
        throw ConfigError(cfg.origin(key) + ": '" + key + "' needs " + std::to_string(labels.size()) + " values");
    return CoarseState(v, labels);
}

template <class P>
P model_params(const RunConfig& cfg, P p) {
    for (auto n : p.names()) p.set(n, cfg.get<double>("model." + std::string(n)));
    return p;
}

/// Call f(simulator, params) with the configured simulator.
template <class F>
int with_simulator(const RunConfig& cfg, F&& f) {
    const std::string sim = cfg.simulator();
    if (sim == "meanfield") {
        const meanfield::MeanFieldSimulator s(cfg.get<double>("meanfield.dt"));
        return f(s, model_params(cfg, meanfield::MfParams{}));
    }
    if (sim == "kmc") {
        const kmc::KmcSimulator s(cfg.get<std::size_t>("kmc.width"), cfg.get<std::size_t>("kmc.height"));
        auto p = model_params(cfg, kmc::KmcParams{});
        p.mixing = kmc::parse_mixing(cfg.get<std::string>("kmc.mixing"));
        return f(s, p);
    }
    if (sim == "agents") {
        const std::string mode = cfg.get<std::string>("agents.lifting");
        if (mode != "delta" && mode != "gaussian")
            throw ConfigError(cfg.origin("agents.lifting") + ": lifting must be \"delta\" or \"gaussian\"");
        const std::size_t N = cfg.get<std::size_t>("agents.N");
        const agents::AgentSimulator s(N, mode == "delta" ? agents::Lifting::Delta : agents::Lifting::Gaussian,
                                       cfg.get<double>("agents.spread"));
        auto p = model_params(cfg, agents::AgentParams{});
        p.N = N;
        return f(s, p);
    }
    throw ConfigError("unknown simulator '" + sim + "'");
}

inline ProtocolConfig protocol_config(const RunConfig& cfg) {
    ProtocolConfig pc;
    pc.u0 = cfg.get<double>("protocol.u0");
    pc.gain = cfg.get<double>("protocol.gain");
    pc.chord_fraction = cfg.get<double>("protocol.chord_fraction");
    pc.expansion = cfg.get_optional<double>("protocol.expansion");
    pc.tol1 = cfg.get_optional<double>("protocol.tol1");
    pc.tol2 = cfg.get_optional<double>("protocol.tol2");
    pc.tol3 = cfg.get_optional<double>("protocol.tol3");
    pc.min_width = cfg.get_optional<double>("protocol.min_width");
    pc.T = cfg.get<double>("protocol.T");
    pc.T_r = cfg.get<double>("protocol.T_r");
    pc.T_s = cfg.get<double>("protocol.T_s");
    pc.max_outer = cfg.get<int>("protocol.max_outer");
    pc.max_inner = cfg.get<int>("protocol.max_inner");
    pc.noise_multiplier = cfg.get<double>("protocol.noise_multiplier");
    pc.divergence_window = cfg.get<int>("protocol.divergence_window");
    pc.divergence_factor = cfg.get<double>("protocol.divergence_factor");
    pc.parameter_min = cfg.get<double>("protocol.parameter_min");
    if (auto m = cfg.get_optional<double>("protocol.parameter_max")) pc.parameter_max = *m;
    if (auto s = cfg.get_optional<std::vector<double>>("protocol.drift_signs")) pc.drift_signs = *s;
    pc.ens = ensemble(cfg);
    pc.validate();
    return pc;
}

inline json to_json(const CoarseState& x) {
    json j = json::array();
    for (std::size_t i = 0; i < x.dimension(); ++i) j.push_back(x[i]);
    return j;
}

inline json to_json(const SaddleResult& r, const std::string& parameter) {
    json j;
    j["parameter"] = parameter;
    j["p_star"] = r.p_star;
    j["converged"] = r.converged;
    j["status"] = std::string(to_string(r.status));
    j["message"] = r.message;
    j["x_saddle"] = to_json(r.x_saddle);
    j["x_uncertainty"] = r.x_uncertainty;
    j["u_trace"] = r.u_trace;
    json xs = json::array();
    for (const auto& x : r.x_trace) xs.push_back(to_json(x));
    j["x_trace"] = xs;
    j["outer_iterations"] = r.outer_iterations;
    j["evaluations"] = r.evaluations;
    j["tol1"] = r.tolerances.tol1;
    j["tol2"] = r.tolerances.tol2;
    j["drift_signs"] = r.drift_signs;
    j["clamped"] = r.clamped;
    j["certificate_h"] = r.certificate_h;
    j["certificate_sigma"] = r.certificate_sigma;
    return j;
}

inline json to_json(const EvaluationRecord& r) {
    return {{"k", r.k},   {"q", r.q},           {"lB", r.lB},
            {"uB", r.uB}, {"u", r.u},           {"h", r.h},
            {"sigma_h", r.sigma_h}, {"component", r.component}, {"wall_time", r.wall_time},
            {"x0", r.x0}};
}

// ---------------------------------------------------------------------------

inline int cmd_simulate(Context& ctx) {
    const auto& cfg = ctx.cfg;
    return with_simulator(cfg, [&](const auto& sim, const auto& params) {
        using S = std::decay_t<decltype(sim)>;
        sim.check_parameters(params);
        const double T = cfg.get<double>("simulate.T");
        const double dt = cfg.get<double>("simulate.sample_dt");
        if (!(T >= 0.0) || !std::isfinite(T)) throw ConfigError(cfg.origin("simulate.T") + ": T must be >= 0");
        if (!(dt > 0.0)) throw ConfigError(cfg.origin("simulate.sample_dt") + ": sample_dt must be positive");
        if constexpr (std::is_same_v<S, agents::AgentSimulator>) {
            auto whole = [&](double t) {
                const double w = t / params.delta_t;
                return std::abs(w - std::round(w)) < 1e-9;
            };
            if (!whole(dt) || !whole(T))
                throw ConfigError("simulate: T and sample_dt must be whole multiples of delta_t for agents");
        }
        const auto ens = ensemble(cfg);
        ens.validate(S::is_stochastic);
        const auto labels = sim.labels();
        const CoarseState start = state(cfg, "simulate.start", labels);

        const std::string name = "series.csv";
        auto f = open_in(ctx, name);
        io::CsvWriter csv(f);
        std::vector<std::string> head{"t"};
        for (const auto& l : labels) head.push_back(l);
        if (S::is_stochastic)
            for (const auto& l : labels) head.push_back("se_" + l);
        csv.header(head);
        auto emit = [&](double t, const EnsembleMean& m) {
            std::vector<double> row{t};
            for (std::size_t j = 0; j < m.mean.dimension(); ++j) row.push_back(m.mean[j]);
            if (S::is_stochastic)
                for (double se : m.standard_error) row.push_back(se);
            csv.row(row);
        };
        if (T > 0.0) {
            auto U = lift_ensemble(sim, start, ens);
            emit(0.0, restrict_mean(sim, U));
            const auto steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
            double t = 0.0;
            for (std::size_t k = 1; k <= steps; ++k) {
                const double next = std::min(T, static_cast<double>(k) * dt);
                U = evolve_ensemble(sim, std::move(U), params, next - t, ens.threads);
                t = next;
                emit(t, restrict_mean(sim, U));
            }
        }
        f.close();
        write_sidecar(ctx, name);
        note(ctx, "wrote " + (ctx.out_dir / name).string());
        return kOk;
    });
}

inline int cmd_saddle(Context& ctx) {
    const auto& cfg = ctx.cfg;
    return with_simulator(cfg, [&](const auto& sim, const auto& params) {
        using P = std::decay_t<decltype(params)>;
        const std::string parameter = cfg.get<std::string>("protocol.parameter");
        const ParameterAxis<P> axis(params, parameter);
        const ProtocolConfig pc = protocol_config(cfg);
        const CoarseState start = state(cfg, "protocol.start", sim.labels());

        auto log = open_in(ctx, "saddle_log.ndjson");
        const auto res = saddle_protocol(sim, axis, axis.nominal(), start, pc,
                                         [&](const EvaluationRecord& r) { log << to_json(r).dump() << '\n' << std::flush; });
        log.close();
        const std::string name = "saddle.json";
        auto f = open_in(ctx, name);
        f << to_json(res, parameter).dump(2) << '\n';
        f.close();
        write_sidecar(ctx, name);
        note(ctx, std::string(to_string(res.status)) + " after " + std::to_string(res.outer_iterations) +
                      " outer iterations: " + res.message);
        return res.converged ? kOk : kNotConverged;
    });
}

inline int cmd_trace(Context& ctx) {
    const auto& cfg = ctx.cfg;
    return with_simulator(cfg, [&](const auto& sim, const auto& params) {
        using P = std::decay_t<decltype(params)>;
        using namespace continuation;
        const std::string parameter = cfg.get<std::string>("trace.parameter");
        const ParameterAxis<P> axis(params, parameter);
        const auto grid = config::grid(cfg, "trace");
        const auto labels = sim.labels();

        Diagram d;
        d.parameter = parameter;
        d.labels = labels;
        json results;
        results["folds"] = json::array();
        results["failures"] = json::array();
        results["aborted"] = false;

        const std::string name = "diagram.csv";
        auto write = [&] {
            auto f = open_in(ctx, name);
            write_diagram_csv(f, d);
            f.close();
            results["folds"] = d.folds;
            write_sidecar(ctx, name, results);
        };

        StableTraceOptions so;
        so.settle_T = cfg.get<double>("trace.settle_T");
        so.jump_threshold = cfg.get<double>("trace.jump_threshold");
        so.ens = ensemble(cfg);
        const auto starts = cfg.get<std::vector<std::vector<double>>>("trace.stable_starts");
        const auto reverse = cfg.get_optional<std::vector<double>>("trace.stable_reverse").value_or(std::vector<double>{});
        if (!reverse.empty() && reverse.size() != starts.size())
            throw ConfigError(cfg.origin("trace.stable_reverse") + ": one entry per stable start");
        const bool saddle = cfg.get<bool>("trace.saddle");

        ProtocolConfig pc;
        SaddleTraceOptions to;
        std::optional<CoarseState> seed;
        if (saddle && !grid.empty()) {
            pc = protocol_config(cfg);
            seed = state(cfg, "trace.saddle_start", labels);
            to.max_consecutive_failures = cfg.get<int>("trace.max_consecutive_failures");
            if (auto m = cfg.get_optional<double>("trace.max_slope")) to.max_slope = *m;
            if (auto w = cfg.get_optional<std::vector<double>>("trace.window")) {
                if (w->size() != 2) throw ConfigError(cfg.origin("trace.window") + ": window needs [lo, hi]");
                to.window = {{(*w)[0], (*w)[1]}};
            }
            to.steer = cfg.get<std::string>("trace.steer");
            to.warm_start = cfg.get<bool>("trace.warm_start");
        }

        if (!grid.empty()) {
            for (std::size_t i = 0; i < starts.size(); ++i) {
                if (starts[i].size() != labels.size())
                    throw ConfigError(cfg.origin("trace.stable_starts") + ": each start needs " +
                                      std::to_string(labels.size()) + " values");
                std::vector<double> g = grid;
                if (!reverse.empty() && reverse[i] != 0.0) std::reverse(g.begin(), g.end());
                const int id = i == 0 ? 0 : static_cast<int>(i) + 1;
                const auto b = trace_stable_branch(sim, axis, g, CoarseState(starts[i], labels), so, id);
                d.add(b);
                note(ctx, "stable branch " + std::to_string(id) + ": " + std::to_string(b.points.size()) + " points" +
                              (b.terminated ? ", lost at " + io::format_double(b.jump_parameter) : ""));
            }
            if (saddle) {
                auto log = open_in(ctx, "trace_log.ndjson");
                const auto b = trace_saddle_branch(sim, axis, grid, pc, *seed, to);
                for (const auto& r : b.runs) {
                    json j = to_json(r, to.steer.empty() ? parameter : to.steer);
                    j.erase("x_trace");
                    log << j.dump() << '\n';
                }
                log.close();
                d.add(b);
                for (const auto& f : b.failures) results["failures"].push_back({{"parameter", f.parameter}, {"reason", f.reason}});
                results["aborted"] = b.aborted;
                note(ctx, "saddle branch: " + std::to_string(b.points.size()) + " points, " +
                              std::to_string(b.failures.size()) + " failures" + (b.aborted ? ", aborted" : ""));
            }
        }
        write();
        return results["aborted"].get<bool>() ? kNotConverged : kOk;
    });
}

inline int cmd_eigs(Context& ctx) {
    const auto& cfg = ctx.cfg;
    if (cfg.simulator() != "meanfield")
        throw ConfigError(cfg.origin("simulator") + ": eigs needs the meanfield simulator, not " + cfg.simulator());
    const auto base = model_params(cfg, meanfield::MfParams{});
    base.validate();
    const std::string parameter = cfg.get<std::string>("eigs.parameter");
    const auto grid = config::grid(cfg, "eigs");
    const auto scan = meanfield::branch_scan(base, parameter, grid);

    const std::string name = "eigs.csv";
    auto f = open_in(ctx, name);
    io::CsvWriter csv(f);
    csv.header({parameter, "theta_A", "theta_B", "lambda_slow", "lambda_fast", "lambda_imag", "stability"});
    struct Row {
        double parameter;
        meanfield::Vec2 theta;
        meanfield::EigenPair e;
        std::string tag;
    };
    std::vector<Row> rows;
    for (const auto& row : scan.rows)
        for (const auto& fp : row.points)
            rows.push_back({row.parameter, fp.theta, fp.eigenvalues, std::string(meanfield::to_string(fp.stability))});
    const ParameterAxis<meanfield::MfParams> axis(base, parameter);
    for (const auto& fd : scan.folds)
        rows.push_back({fd.parameter, fd.theta, meanfield::eigenvalues(meanfield::jacobian(fd.theta, axis.at(fd.parameter))), "fold"});
    // Fold rows slot into the sweep order at their refined parameter values.
    const bool increasing = grid.size() < 2 || grid[1] > grid[0];
    std::stable_sort(rows.begin(), rows.end(), [&](const Row& a, const Row& b) {
        return increasing ? a.parameter < b.parameter : a.parameter > b.parameter;
    });
    for (const auto& r : rows)
        csv.row_strings({io::format_double(r.parameter), io::format_double(r.theta[0]), io::format_double(r.theta[1]),
                         io::format_double(r.e.slow.real()), io::format_double(r.e.fast.real()),
                         io::format_double(std::abs(r.e.slow.imag())), r.tag});
    f.close();
    json results;
    results["folds"] = json::array();
    for (const auto& fd : scan.folds) results["folds"].push_back({{"parameter", fd.parameter}, {"theta", {fd.theta[0], fd.theta[1]}}});
    write_sidecar(ctx, name, results);
    return kOk;
}

/// Run one subcommand with a loaded configuration; returns the exit code.
/// Errors are reported on `err`.
inline int run(const std::string& command, const RunConfig& cfg, std::ostream& err) {
    Context ctx;
    ctx.command = command;
    ctx.cfg = cfg;
    ctx.log = &err;
    try {
        ctx.resolved = cfg.resolved();
        ctx.out_dir = cfg.get<std::string>("out");
        if (command == "simulate") return cmd_simulate(ctx);
        if (command == "saddle") return cmd_saddle(ctx);
        if (command == "trace") return cmd_trace(ctx);
        if (command == "eigs") return cmd_eigs(ctx);
        throw ConfigError("unknown command '" + command + "'");
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ConvergenceError& e) {
        err << "not converged: " << e.what() << '\n';
        return kNotConverged;
    } catch (const SimulationError& e) {
        err << "aborted: " << e.what() << " (realization " << e.realization() << ", seed " << e.seed() << ")\n";
        return kRuntimeAbort;
    } catch (const std::exception& e) {
        err << "aborted: " << e.what() << '\n';
        return kRuntimeAbort;
    }
}

} // namespace eqf::cli
