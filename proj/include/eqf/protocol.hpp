#pragma once

// Iterative location of a coarse saddle point by steering the bifurcation
// parameter of a microscopic simulator.
//
// Outer loop (per iteration k):
//   A. perturb the micro state for T at p* + u_{k-1}
//   B. bracket the next action between 0 and u_{k-1}
//   C. chord search on the bracket: relax T_r at p* + u, watch the drift over
//      T_s, shrink the bracket by the sign of the drift, widen it by c when
//      it collapses against a bound that never moved
//   D. relax T_r at the accepted action û
//   E. u_k = gain * û; stop once |u_k| < tol1
//
// The micro state is lifted once, at the start, and threaded through every
// step afterwards.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coarse.hpp"
#include "coarse_state.hpp"
#include "error.hpp"
#include "simulator.hpp"

namespace eqf {

struct ProtocolConfig {
    /// Initial action; sign per which side of the fold p* lies on.
    double u0 = 0.0;
    double gain = 1.5;
    /// Chord fraction a in (0, 1).
    double chord_fraction = 0.5;
    /// Bound expansion increment c (default 0.5 |u_{k-1}| of the current inner search).
    std::optional<double> expansion;
    /// Outer tolerance on |u| (default max(0.005 |u0|, noise floor)).
    std::optional<double> tol1;
    /// Tolerance on |h| (default max(1e-6, noise_multiplier * sigma_h)).
    std::optional<double> tol2;
    /// Bracket width below which a stuck bound is expanded (default 0.01 |u_{k-1}|).
    std::optional<double> tol3;
    /// Accept the chord point once both bounds have moved and the bracket is
    /// narrower than this (default 1e-3 * tol3). Guards against |h| never
    /// dropping below tol2 under sampling noise.
    std::optional<double> min_width;

    double T = 0.05;
    double T_r = 0.05;
    double T_s = 0.05;
    int max_outer = 1000;
    int max_inner = 60;
    EnsembleSpec ens;

    /// Orientation of each observable relative to the parameter: the drift of
    /// observable j is multiplied by drift_signs[j] so that h < 0 always means
    /// "the equilibrium of the current state lies at a larger parameter".
    /// Empty: probed once at start from the response to u0.
    std::vector<double> drift_signs;
    double noise_multiplier = 3.0;

    /// Abort when |u| has grown for divergence_window consecutive iterations
    /// and exceeds divergence_factor * gain * |u0|. A correct run also grows
    /// |u| while it walks the stable branch towards the fold, so growth alone
    /// is not a failure signal.
    int divergence_window = 3;
    double divergence_factor = 2.0;

    /// Admissible range of the steered parameter; expansions are clamped to it.
    double parameter_min = 0.0;
    double parameter_max = std::numeric_limits<double>::infinity();

    void validate() const {
        auto positive = [](const std::optional<double>& v, const char* name) {
            if (v && !(*v > 0.0)) throw ConfigError(std::string("protocol: ") + name + " must be > 0");
        };
        if (!std::isfinite(u0)) throw ConfigError("protocol: u0 must be finite");
        if (!(gain > 1.0)) throw ConfigError("protocol: gain must be > 1");
        if (!(chord_fraction > 0.0 && chord_fraction < 1.0))
            throw ConfigError("protocol: chord fraction a must satisfy 0 < a < 1");
        positive(expansion, "c");
        positive(tol1, "tol1");
        positive(tol2, "tol2");
        positive(tol3, "tol3");
        positive(min_width, "min_width");
        if (!(T > 0.0) || !(T_r > 0.0) || !(T_s > 0.0)) throw ConfigError("protocol: T, T_r, T_s must be > 0");
        if (max_outer < 1 || max_inner < 1) throw ConfigError("protocol: iteration caps must be >= 1");
        if (!(noise_multiplier >= 0.0)) throw ConfigError("protocol: noise_multiplier must be >= 0");
        if (divergence_window < 1 || !(divergence_factor > 0.0))
            throw ConfigError("protocol: divergence guard settings must be positive");
        for (double s : drift_signs)
            if (s != 1.0 && s != -1.0) throw ConfigError("protocol: drift signs must be +1 or -1");
        if (!(parameter_min < parameter_max)) throw ConfigError("protocol: parameter_min must be < parameter_max");
    }
};

/// Search interval [lB, uB] for the control action, remembering where the
/// current inner search started.
struct ChordBracket {
    double lB = 0.0;
    double uB = 0.0;
    int q = 0;
    double lB0 = 0.0;
    double uB0 = 0.0;

    /// [0, u] for u > 0, [u, 0] otherwise.
    static ChordBracket around(double u_prev) {
        ChordBracket b;
        if (u_prev > 0.0) b.uB = u_prev;
        else b.lB = u_prev;
        b.lB0 = b.lB;
        b.uB0 = b.uB;
        return b;
    }

    double width() const noexcept { return uB - lB; }
};

struct ChordPoint {
    double u = 0.0;
    bool zero_width = false;
};

/// u = lB + a (uB - lB).
inline ChordPoint chord_point(const ChordBracket& b, double a) {
    if (!(a > 0.0 && a < 1.0)) throw ConfigError("chord_point: a must satisfy 0 < a < 1");
    if (b.lB > b.uB) throw ConfigError("chord_point: bracket has lB > uB");
    if (b.lB == b.uB) return {b.lB, true};
    return {b.lB + a * (b.uB - b.lB), false};
}

/// Shrink the bracket by the sign of the oriented drift h at action u.
inline void shrink_bracket(ChordBracket& b, double u, double h) {
    if (h < 0.0) b.lB = u;
    else if (h > 0.0) b.uB = u;
}

/// Widen a bracket that collapsed against a bound that never moved, clamped
/// to [lo, hi]. Returns whether an expansion happened; *clamped reports
/// whether the clamp bit.
inline bool expand_if_stuck(ChordBracket& b, double tol3, double c, double lo, double hi, bool* clamped = nullptr) {
    const bool upper_stuck = b.uB0 == b.uB;
    const bool lower_stuck = b.lB0 == b.lB;
    if (!((upper_stuck || lower_stuck) && b.width() < tol3)) return false;
    if (upper_stuck) {
        const double target = b.uB0 + c;
        b.uB0 = std::min(target, hi);
        b.uB = b.uB0;
        if (clamped && b.uB0 < target) *clamped = true;
    } else {
        const double target = b.lB0 - c;
        b.lB0 = std::max(target, lo);
        b.lB = b.lB0;
        if (clamped && b.lB0 > target) *clamped = true;
    }
    return true;
}

/// One line of the run log, emitted for every inner evaluation.
struct EvaluationRecord {
    int k = 0;
    int q = 0;
    double lB = 0.0;
    double uB = 0.0;
    double u = 0.0;
    double h = 0.0;
    double sigma_h = 0.0;
    std::size_t component = 0;
    double wall_time = 0.0;
    /// Ensemble mean after relaxation, before the observation window.
    std::vector<double> x0;
};

using EvaluationSink = std::function<void(const EvaluationRecord&)>;

template <CoarseSimulator S>
struct ActionEvaluation {
    /// Oriented drift indicator (raw drift times the observable's sign).
    double h = 0.0;
    double raw_h = 0.0;
    double sigma_h = 0.0;
    std::size_t component = 0;
    CoarseState x0;
    CoarseState xT;
    Ensemble<S> relaxed;
};

/// Relax a copy of U for T_r at p* + u, restrict, watch for T_s, and report
/// the drift. U itself is left untouched.
template <CoarseSimulator S>
ActionEvaluation<S> evaluate_action(const S& sim, const Ensemble<S>& U, double u,
                                    const ParameterAxis<typename S::params_type>& axis, double p_star,
                                    const ProtocolConfig& cfg, const std::vector<double>& signs = {}) {
    const double value = p_star + u;
    if (!(value >= cfg.parameter_min && value <= cfg.parameter_max))
        throw ConfigError("evaluate_action: parameter " + axis.name + " = " + std::to_string(value) +
                          " outside the admissible range");
    const auto params = axis.at(value);
    sim.check_parameters(params);

    ActionEvaluation<S> out;
    out.relaxed = evolve_ensemble(sim, U, params, cfg.T_r, cfg.ens.threads);
    const auto before = restrict_each(sim, out.relaxed);
    auto observed = evolve_ensemble(sim, out.relaxed, params, cfg.T_s, cfg.ens.threads);
    const auto d = paired_drift(before, restrict_each(sim, observed));
    out.raw_h = d.h;
    out.component = d.component;
    out.sigma_h = d.sigma;
    out.h = signs.empty() ? d.h : d.h * signs.at(d.component);
    out.x0 = d.x0;
    out.xT = d.xT;
    return out;
}

/// Outer tolerances with defaults filled in.
struct ResolvedTolerances {
    double tol1 = 0.0;
    double tol2 = 0.0;
};

/// Bracket controls of one inner search started from u_prev.
struct BracketControls {
    double c = 0.0;
    double tol3 = 0.0;
    double min_width = 0.0;
};

inline BracketControls bracket_controls(const ProtocolConfig& cfg, double u_prev) {
    BracketControls b;
    b.c = cfg.expansion.value_or(0.5 * std::abs(u_prev));
    b.tol3 = cfg.tol3.value_or(0.01 * std::abs(u_prev));
    b.min_width = cfg.min_width.value_or(1e-3 * b.tol3);
    return b;
}

template <CoarseSimulator S>
struct InnerResult {
    double u_hat = 0.0;
    bool converged = false;
    bool clamped = false;
    int expansions = 0;
    ChordBracket bracket;
    std::vector<double> u_history;
    std::vector<double> h_history;
    ActionEvaluation<S> last;
};

/// Chord search for the action at which the current micro state is a coarse
/// equilibrium (|h| <= tol2).
template <CoarseSimulator S>
InnerResult<S> inner_chord_search(const S& sim, const Ensemble<S>& U, double u_prev,
                                  const ParameterAxis<typename S::params_type>& axis, double p_star,
                                  const ProtocolConfig& cfg, const ResolvedTolerances& tol,
                                  const std::vector<double>& signs, int k = 0, const EvaluationSink& sink = {}) {
    if (u_prev == 0.0) throw ConfigError("inner_chord_search: u_prev must be nonzero");
    using clock = std::chrono::steady_clock;
    const double lo = cfg.parameter_min - p_star, hi = cfg.parameter_max - p_star;
    const BracketControls ctl = bracket_controls(cfg, u_prev);

    InnerResult<S> r;
    r.bracket = ChordBracket::around(u_prev);
    auto& b = r.bracket;
    while (b.q < cfg.max_inner) {
        const auto start = clock::now();
        const auto proposal = chord_point(b, cfg.chord_fraction);
        ++b.q;
        auto eval = evaluate_action(sim, U, proposal.u, axis, p_star, cfg, signs);
        if (sink) {
            sink({k, b.q, b.lB, b.uB, proposal.u, eval.h, eval.sigma_h, eval.component,
                  std::chrono::duration<double>(clock::now() - start).count(),
                  {eval.x0.values().begin(), eval.x0.values().end()}});
        }
        r.u_history.push_back(proposal.u);
        r.h_history.push_back(eval.h);
        r.u_hat = proposal.u;
        const double h = eval.h;
        r.last = std::move(eval);
        if (std::abs(h) <= tol.tol2) {
            r.converged = true;
            return r;
        }
        shrink_bracket(b, proposal.u, h);
        if (expand_if_stuck(b, ctl.tol3, ctl.c, lo, hi, &r.clamped)) {
            ++r.expansions;
        } else if (b.lB != b.lB0 && b.uB != b.uB0 && b.width() < ctl.min_width) {
            r.converged = true;
            return r;
        }
    }
    return r;
}

enum class ProtocolStatus { Converged, MaxOuter, Diverged, InnerFailed, NoiseLimited };

inline std::string_view to_string(ProtocolStatus s) {
    switch (s) {
    case ProtocolStatus::Converged: return "converged";
    case ProtocolStatus::MaxOuter: return "max_outer_exceeded";
    case ProtocolStatus::Diverged: return "diverged";
    case ProtocolStatus::InnerFailed: return "inner_search_failed";
    case ProtocolStatus::NoiseLimited: return "noise_limited";
    }
    return "unknown";
}

struct SaddleResult {
    CoarseState x_saddle;
    /// Standard error of each observable of x_saddle over the ensemble.
    std::vector<double> x_uncertainty;
    double p_star = 0.0;
    std::vector<double> u_trace;
    std::vector<CoarseState> x_trace;
    bool converged = false;
    int outer_iterations = 0;
    int evaluations = 0;
    ProtocolStatus status = ProtocolStatus::MaxOuter;
    std::string message;
    std::vector<double> drift_signs;
    ResolvedTolerances tolerances;
    bool clamped = false;
    /// Post-hoc check: drift at the located state with u = 0.
    double certificate_h = 0.0;
    double certificate_sigma = 0.0;
};

namespace detail {

/// Orientation from the response to the first action: component j moved with
/// sign(Δx_j); a stable node shifts towards its new equilibrium, so
/// sign(Δx_j / u0) is the sign of dx_j/dp along the slow direction.
inline std::vector<double> probe_signs(const CoarseState& x0, const CoarseState& xT, double u0) {
    std::vector<double> s(x0.dimension(), 1.0);
    for (std::size_t j = 0; j < s.size(); ++j) {
        const double d = (xT[j] - x0[j]) * u0;
        s[j] = d < 0.0 ? -1.0 : 1.0;
    }
    return s;
}

} // namespace detail

/// Drive the simulator from a stable coarse state at p* to the coarse saddle
/// that collides with it at the nearby fold.
template <CoarseSimulator S>
SaddleResult saddle_protocol(const S& sim, const ParameterAxis<typename S::params_type>& axis, double p_star,
                             const CoarseState& start, const ProtocolConfig& cfg, const EvaluationSink& sink = {}) {
    cfg.validate();
    cfg.ens.validate(S::is_stochastic);
    if (start.dimension() != sim.coarse_dimension())
        throw ConfigError("saddle_protocol: start state has wrong dimension");
    sim.check_parameters(axis.at(p_star));

    SaddleResult res;
    res.p_star = p_star;
    const double au0 = std::abs(cfg.u0);

    Ensemble<S> U = lift_ensemble(sim, start, cfg.ens);
    auto snapshot = [&] { return restrict_mean(sim, U); };

    double u = cfg.u0;
    res.u_trace.push_back(u);
    res.x_trace.push_back(snapshot().mean);

    ResolvedTolerances tol;
    std::vector<double> signs = cfg.drift_signs;
    if (!signs.empty() && signs.size() != sim.coarse_dimension())
        throw ConfigError("saddle_protocol: drift_signs must have one entry per observable");

    auto finish = [&](ProtocolStatus status, std::string msg) {
        const auto m = snapshot();
        res.x_saddle = m.mean;
        res.x_uncertainty = m.standard_error;
        res.status = status;
        res.converged = status == ProtocolStatus::Converged;
        res.message = std::move(msg);
        res.drift_signs = signs;
        res.tolerances = tol;
        if (res.converged) {
            const auto check = evaluate_action(sim, U, 0.0, axis, p_star, cfg, signs);
            res.certificate_h = check.h;
            res.certificate_sigma = check.sigma_h;
        }
        return res;
    };

    if (u == 0.0) {
        // Already at the saddle: the action sequence stays at zero.
        tol.tol1 = cfg.tol1.value_or(0.0);
        tol.tol2 = cfg.tol2.value_or(1e-6);
        return finish(ProtocolStatus::Converged, "u0 = 0");
    }

    // Probe the response to u0 from the starting node: fixes the observable
    // orientation and the noise-derived tolerance floors.
    const auto probe = evaluate_action(sim, U, u, axis, p_star, cfg);
    ++res.evaluations;
    if (signs.empty()) signs = detail::probe_signs(probe.x0, probe.xT, u);
    const double sigma0 = probe.sigma_h;
    tol.tol2 = cfg.tol2.value_or(std::max(1e-6, cfg.noise_multiplier * sigma0));
    {
        double floor1 = 0.0;
        if (sigma0 > 0.0 && probe.raw_h != 0.0)
            floor1 = cfg.gain * cfg.noise_multiplier * sigma0 * au0 / std::abs(probe.raw_h);
        tol.tol1 = cfg.tol1.value_or(std::max(0.005 * au0, floor1));
    }

    // A noise floor above |u0| would accept the starting node itself.
    if (!cfg.tol1 && tol.tol1 >= au0)
        return finish(ProtocolStatus::NoiseLimited, "noise-derived tol1 " + std::to_string(tol.tol1) +
                                                        " is not below |u0|; add realizations, lengthen T_r or set tol1");
    if (std::abs(u) < tol.tol1) return finish(ProtocolStatus::Converged, "|u0| < tol1");

    int growth_streak = 0;
    const double divergence_bound = cfg.divergence_factor * cfg.gain * au0;
    for (int k = 1; k <= cfg.max_outer; ++k) {
        res.outer_iterations = k;
        if (!(p_star + u >= cfg.parameter_min && p_star + u <= cfg.parameter_max)) {
            return finish(ProtocolStatus::Diverged, "action drove " + axis.name + " to " + std::to_string(p_star + u) +
                                                        ", outside the admissible range");
        }
        // A: perturb.
        U = evolve_ensemble(sim, std::move(U), axis.at(p_star + u), cfg.T, cfg.ens.threads);
        // B + C: chord search on [0, u] / [u, 0].
        auto inner = inner_chord_search(sim, U, u, axis, p_star, cfg, tol, signs, k, sink);
        res.evaluations += static_cast<int>(inner.h_history.size());
        res.clamped = res.clamped || inner.clamped;
        if (!inner.converged) {
            U = std::move(inner.last.relaxed);
            res.x_trace.push_back(snapshot().mean);
            return finish(ProtocolStatus::InnerFailed,
                          "inner chord search exceeded max_inner at outer iteration " + std::to_string(k) +
                              " (bracket [" + std::to_string(inner.bracket.lB) + ", " +
                              std::to_string(inner.bracket.uB) + "])");
        }
        const double u_hat = inner.u_hat;
        // D: relax at the accepted action.
        U = evolve_ensemble(sim, std::move(inner.last.relaxed), axis.at(p_star + u_hat), cfg.T_r, cfg.ens.threads);
        // E: overshoot.
        const double next = cfg.gain * u_hat;
        growth_streak = std::abs(next) > std::abs(u) ? growth_streak + 1 : 0;
        u = next;
        res.u_trace.push_back(u);
        res.x_trace.push_back(snapshot().mean);

        if (std::abs(u) < tol.tol1) return finish(ProtocolStatus::Converged, "|u| < tol1");
        if (growth_streak >= cfg.divergence_window && std::abs(u) > divergence_bound) {
            return finish(ProtocolStatus::Diverged,
                          "|u| grew for " + std::to_string(growth_streak) + " consecutive iterations to " +
                              std::to_string(std::abs(u)) + " (wrong sign of u0, or no fold nearby)");
        }
    }
    return finish(ProtocolStatus::MaxOuter, "max_outer exceeded");
}

} // namespace eqf
