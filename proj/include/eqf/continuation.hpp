#pragma once

// Coarse bifurcation diagrams: stable branches by direct simulation, saddle
// branches by repeated saddle_protocol runs over a parameter grid.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "coarse.hpp"
#include "io.hpp"
#include "meanfield.hpp"
#include "protocol.hpp"

namespace eqf::continuation {

enum class Stability { Stable, Saddle };
enum class Provenance { DirectSimulation, Protocol, Oracle };

inline std::string_view to_string(Stability s) { return s == Stability::Stable ? "stable" : "saddle"; }

inline std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::DirectSimulation: return "direct_simulation";
    case Provenance::Protocol: return "protocol";
    case Provenance::Oracle: return "oracle";
    }
    return "unknown";
}

struct BranchPoint {
    double parameter = 0.0;
    CoarseState x;
    Stability stability = Stability::Stable;
    Provenance provenance = Provenance::DirectSimulation;
    /// Standard error per observable (0 for deterministic simulators).
    std::vector<double> uncertainty;
    int branch = 0;
};

inline void check_monotone(const std::vector<double>& grid, const char* who) {
    const bool inc = std::is_sorted(grid.begin(), grid.end(), std::less_equal<>{});
    const bool dec = std::is_sorted(grid.begin(), grid.end(), std::greater_equal<>{});
    if (!inc && !dec) throw ConfigError(std::string(who) + ": grid must be strictly monotone");
    for (double v : grid)
        if (!std::isfinite(v)) throw ConfigError(std::string(who) + ": grid values must be finite");
}

// ---------------------------------------------------------------------------
// Stable branches

struct StableTraceOptions {
    /// Simulated time at each grid value before the state is recorded.
    double settle_T = 50.0;
    /// Settled states further apart than this (infinity norm) end the branch.
    double jump_threshold = 0.1;
    EnsembleSpec ens;
};

struct StableBranch {
    std::vector<BranchPoint> points;
    bool terminated = false;
    /// Grid value at which the attractor was lost.
    double jump_parameter = std::numeric_limits<double>::quiet_NaN();

    double last_parameter() const { return points.empty() ? std::numeric_limits<double>::quiet_NaN() : points.back().parameter; }

    /// Midpoint of the grid cell in which the branch was lost.
    std::optional<double> fold_estimate() const {
        if (!terminated || points.empty()) return std::nullopt;
        return 0.5 * (points.back().parameter + jump_parameter);
    }
};

/// Follow an attractor along the grid, carrying the micro states from one
/// grid value to the next.
template <CoarseSimulator S>
StableBranch trace_stable_branch(const S& sim, const ParameterAxis<typename S::params_type>& axis,
                                 const std::vector<double>& grid, const CoarseState& start,
                                 const StableTraceOptions& opt, int branch_id = 0) {
    check_monotone(grid, "trace_stable_branch");
    if (!(opt.settle_T > 0.0)) throw ConfigError("trace_stable_branch: settle_T must be positive");
    if (!(opt.jump_threshold > 0.0)) throw ConfigError("trace_stable_branch: jump_threshold must be positive");
    StableBranch out;
    if (grid.empty()) return out;
    for (double v : grid) sim.check_parameters(axis.at(v));

    auto U = lift_ensemble(sim, start, opt.ens);
    for (double v : grid) {
        U = evolve_ensemble(sim, std::move(U), axis.at(v), opt.settle_T, opt.ens.threads);
        auto m = restrict_mean(sim, U);
        if (!out.points.empty() && max_abs_difference(m.mean, out.points.back().x) > opt.jump_threshold) {
            out.terminated = true;
            out.jump_parameter = v;
            break;
        }
        out.points.push_back(
            {v, std::move(m.mean), Stability::Stable, Provenance::DirectSimulation, std::move(m.standard_error), branch_id});
    }
    return out;
}

/// Step 0 pre-scan: trace the attractor reached from each start and return
/// the fold estimates of the branches that were lost inside the grid.
template <CoarseSimulator S>
std::vector<double> prescan_folds(const S& sim, const ParameterAxis<typename S::params_type>& axis,
                                  const std::vector<double>& grid, const std::vector<CoarseState>& starts,
                                  const StableTraceOptions& opt) {
    std::vector<double> folds;
    for (const auto& s : starts) {
        const auto b = trace_stable_branch(sim, axis, grid, s, opt);
        if (auto f = b.fold_estimate()) folds.push_back(*f);
    }
    std::sort(folds.begin(), folds.end());
    return folds;
}

// ---------------------------------------------------------------------------
// Saddle branches

struct SaddleTraceOptions {
    /// Abort once more than this many grid values in a row fail.
    int max_consecutive_failures = 2;
    /// Largest accepted change of the saddle state per unit parameter between
    /// consecutive converged points; larger steps are treated as a jump to
    /// another branch and recorded as failures.
    double max_slope = std::numeric_limits<double>::infinity();
    /// When set, every grid value must lie strictly inside this parameter window.
    std::optional<std::pair<double, double>> window;
    /// Parameter the protocol steers; empty means the swept parameter itself.
    std::string steer;
    /// Start each run from the previous converged saddle. Needs the swept
    /// parameter to be the steered one (the warm-start action is derived from
    /// the grid step); otherwise every run starts from seed_start with cfg.u0.
    bool warm_start = true;
};

struct SaddleFailure {
    double parameter = 0.0;
    std::string reason;
};

struct SaddleBranch {
    std::vector<BranchPoint> points;
    std::vector<SaddleFailure> failures;
    std::vector<SaddleResult> runs;
    bool aborted = false;
};

/// Protocol run at each grid value. With warm starts the first run starts
/// from seed_start with cfg.u0; each later run starts from the previous
/// converged saddle with u0 = gain * (p_prev - p), the offset at which that
/// state is an equilibrium, and reuses the first run's drift signs.
template <CoarseSimulator S>
SaddleBranch trace_saddle_branch(const S& sim, const ParameterAxis<typename S::params_type>& axis,
                                 const std::vector<double>& grid, const ProtocolConfig& cfg,
                                 const CoarseState& seed_start, const SaddleTraceOptions& opt = {},
                                 int branch_id = 1) {
    check_monotone(grid, "trace_saddle_branch");
    if (opt.max_consecutive_failures < 0) throw ConfigError("trace_saddle_branch: max_consecutive_failures must be >= 0");
    if (opt.window) {
        for (double v : grid)
            if (!(v > opt.window->first && v < opt.window->second))
                throw ConfigError("trace_saddle_branch: grid value " + io::format_double(v) +
                                  " lies outside the bistable window");
    }
    const std::string steer = opt.steer.empty() ? axis.name : opt.steer;
    const bool warm = opt.warm_start;
    if (warm && steer != axis.name)
        throw ConfigError("trace_saddle_branch: warm starts need the swept parameter '" + axis.name +
                          "' to be the steered one");
    SaddleBranch out;
    CoarseState start = seed_start;
    std::optional<double> previous;
    std::vector<double> signs = cfg.drift_signs;
    int streak = 0;

    for (double v : grid) {
        ProtocolConfig run = cfg;
        if (warm && previous) {
            run.u0 = cfg.gain * (*previous - v);
            run.drift_signs = signs;
        }
        SaddleResult res;
        std::string failure;
        try {
            const ParameterAxis<typename S::params_type> control(axis.at(v), steer);
            res = saddle_protocol(sim, control, control.nominal(), warm ? start : seed_start, run);
            if (!res.converged) failure = std::string(to_string(res.status)) + ": " + res.message;
        } catch (const ConfigError& e) {
            failure = e.what();
        }
        if (failure.empty() && previous) {
            const double step = max_abs_difference(res.x_saddle, out.points.back().x);
            if (step > opt.max_slope * std::abs(v - *previous))
                failure = "saddle moved by " + io::format_double(step) + ", beyond the slope bound";
        }
        out.runs.push_back(res);
        if (!failure.empty()) {
            out.failures.push_back({v, failure});
            if (++streak > opt.max_consecutive_failures) {
                out.aborted = true;
                break;
            }
            continue;
        }
        streak = 0;
        if (signs.empty()) signs = res.drift_signs;
        out.points.push_back({v, res.x_saddle, Stability::Saddle, Provenance::Protocol, res.x_uncertainty, branch_id});
        start = res.x_saddle;
        previous = v;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Diagrams

struct Diagram {
    std::string parameter;
    std::vector<std::string> labels;
    std::vector<BranchPoint> points;
    std::vector<double> folds;

    void add(const std::vector<BranchPoint>& pts) {
        for (const auto& p : pts) {
            if (!labels.empty() && p.x.dimension() != labels.size())
                throw ConfigError("diagram: branch point has the wrong dimension");
            if (p.stability == Stability::Saddle && p.provenance == Provenance::DirectSimulation)
                throw ConfigError("diagram: saddle points come from the protocol or an oracle only");
            points.push_back(p);
        }
        std::stable_sort(points.begin(), points.end(), [](const BranchPoint& a, const BranchPoint& b) {
            return a.branch != b.branch ? a.branch < b.branch : a.parameter < b.parameter;
        });
    }

    void add(const StableBranch& b) {
        add(b.points);
        if (auto f = b.fold_estimate()) {
            folds.push_back(*f);
            std::sort(folds.begin(), folds.end());
        }
    }

    void add(const SaddleBranch& b) { add(b.points); }
};

/// Newton oracle diagram: each branch_scan point tagged by stability.
inline Diagram oracle_diagram(const meanfield::BranchScan& scan) {
    Diagram d;
    d.parameter = scan.parameter;
    d.labels = {"theta_A", "theta_B"};
    for (const auto& row : scan.rows) {
        for (const auto& fp : row.points) {
            if (fp.stability == meanfield::Stability::Other) continue;
            const bool saddle = fp.stability == meanfield::Stability::Saddle;
            // Points are sorted by theta_A: saddles are branch 1, stable nodes
            // below them 0 and above them 2.
            int branch = 1;
            if (!saddle && row.points.size() == 1) branch = fp.theta[0] > 0.5 ? 2 : 0;
            else if (!saddle) branch = &fp == &row.points.front() ? 0 : 2;
            d.add(std::vector<BranchPoint>{{row.parameter, CoarseState({fp.theta[0], fp.theta[1]}, d.labels),
                                            saddle ? Stability::Saddle : Stability::Stable, Provenance::Oracle,
                                            {0.0, 0.0}, branch}});
        }
    }
    for (const auto& f : scan.folds) d.folds.push_back(f.parameter);
    std::sort(d.folds.begin(), d.folds.end());
    return d;
}

/// Columns: parameter, observables, stability, provenance, one standard error
/// per observable, branch.
inline void write_diagram_csv(std::ostream& out, const Diagram& d) {
    io::CsvWriter csv(out);
    std::vector<std::string> head{d.parameter.empty() ? std::string("parameter") : d.parameter};
    for (const auto& l : d.labels) head.push_back(l);
    head.push_back("stability");
    head.push_back("provenance");
    for (const auto& l : d.labels) head.push_back("se_" + l);
    head.push_back("branch");
    csv.header(head);
    for (const auto& p : d.points) {
        std::vector<std::string> row{io::format_double(p.parameter)};
        for (std::size_t j = 0; j < p.x.dimension(); ++j) row.push_back(io::format_double(p.x[j]));
        row.emplace_back(to_string(p.stability));
        row.emplace_back(to_string(p.provenance));
        for (std::size_t j = 0; j < p.x.dimension(); ++j)
            row.push_back(io::format_double(j < p.uncertainty.size() ? p.uncertainty[j] : 0.0));
        row.push_back(std::to_string(p.branch));
        csv.row_strings(row);
    }
}

} // namespace eqf::continuation
