#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "coarse_state.hpp"
#include "error.hpp"
#include "parallel.hpp"
#include "seed.hpp"
#include "simulator.hpp"

namespace eqf {

struct EnsembleSpec {
    std::size_t n_realizations = 1;
    std::uint64_t base_seed = 0;
    /// Execution hint only; results do not depend on it.
    unsigned threads = 1;

    void validate(bool stochastic) const {
        if (n_realizations == 0) throw ConfigError("ensemble: n_realizations must be positive");
        if (!stochastic && n_realizations != 1)
            throw ConfigError("ensemble: a deterministic simulator requires n_realizations = 1");
    }

    std::uint64_t seed(std::size_t i) const noexcept { return realization_seed(base_seed, i); }
};

/// Independent micro states evolved side by side. Member i was lifted with seeds[i].
template <CoarseSimulator S>
struct Ensemble {
    std::vector<typename S::micro_state> members;
    std::vector<std::uint64_t> seeds;

    std::size_t size() const noexcept { return members.size(); }
};

struct EnsembleMean {
    CoarseState mean;
    std::vector<double> standard_error;
};

template <CoarseSimulator S>
Ensemble<S> lift_ensemble(const S& sim, const CoarseState& x, const EnsembleSpec& ens) {
    ens.validate(S::is_stochastic);
    if (x.dimension() != sim.coarse_dimension())
        throw ConfigError("lift: coarse state has dimension " + std::to_string(x.dimension()) + ", simulator expects " +
                          std::to_string(sim.coarse_dimension()));
    Ensemble<S> e;
    e.seeds.resize(ens.n_realizations);
    for (std::size_t i = 0; i < ens.n_realizations; ++i) e.seeds[i] = ens.seed(i);
    e.members.resize(ens.n_realizations, sim.lift(x, e.seeds[0]));
    parallel_for(ens.n_realizations, ens.threads, [&](std::size_t i) {
        if (i > 0) e.members[i] = sim.lift(x, e.seeds[i]);
    });
    return e;
}

template <CoarseSimulator S>
Ensemble<S> evolve_ensemble(const S& sim, Ensemble<S> e, const typename S::params_type& p, double horizon,
                            unsigned threads = 1) {
    parallel_for(e.size(), threads, [&](std::size_t i) {
        e.members[i] = sim.evolve(std::move(e.members[i]), p, horizon);
    });
    return e;
}

/// Restrict every member; a non-finite observable aborts with the member's index and seed.
template <CoarseSimulator S>
std::vector<CoarseState> restrict_each(const S& sim, const Ensemble<S>& e) {
    std::vector<CoarseState> out;
    out.reserve(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        try {
            out.push_back(sim.restrict(e.members[i]));
        } catch (const SimulationError& err) {
            throw SimulationError(std::string(err.what()) + " [realization " + std::to_string(i) + ", seed " +
                                      std::to_string(e.seeds[i]) + "]",
                                  i, e.seeds[i]);
        }
    }
    return out;
}

/// Arithmetic mean in index order, with the standard error of the mean per observable.
inline EnsembleMean mean_of(const std::vector<CoarseState>& xs) {
    if (xs.empty()) throw ConfigError("mean_of: empty ensemble");
    const std::size_t n = xs.size(), dim = xs.front().dimension();
    std::vector<double> mean(dim, 0.0), se(dim, 0.0);
    for (const auto& x : xs)
        for (std::size_t j = 0; j < dim; ++j) mean[j] += x[j];
    for (auto& m : mean) m /= static_cast<double>(n);
    if (n > 1) {
        for (const auto& x : xs)
            for (std::size_t j = 0; j < dim; ++j) se[j] += (x[j] - mean[j]) * (x[j] - mean[j]);
        for (auto& s : se) s = std::sqrt(s / static_cast<double>(n - 1) / static_cast<double>(n));
    }
    return {CoarseState(std::move(mean), xs.front().labels()), std::move(se)};
}

template <CoarseSimulator S>
EnsembleMean restrict_mean(const S& sim, const Ensemble<S>& e) {
    return mean_of(restrict_each(sim, e));
}

/// lift -> evolve(T) -> restrict, averaged over the ensemble.
template <CoarseSimulator S>
CoarseState coarse_timestep(const S& sim, const CoarseState& x, const typename S::params_type& p, double horizon,
                            const EnsembleSpec& ens) {
    if (!(horizon > 0.0)) throw ConfigError("coarse_timestep: horizon must be positive");
    sim.check_parameters(p);
    auto e = lift_ensemble(sim, x, ens);
    e = evolve_ensemble(sim, std::move(e), p, horizon, ens.threads);
    return restrict_mean(sim, e).mean;
}

/// Index of the component with the largest absolute change; ties go to the smallest index.
inline std::size_t drift_component(const CoarseState& x0, const CoarseState& xT) {
    if (x0.dimension() != xT.dimension() || x0.dimension() == 0)
        throw ConfigError("drift_indicator: dimension mismatch");
    std::size_t best = 0;
    double best_abs = std::abs(xT[0] - x0[0]);
    for (std::size_t j = 1; j < x0.dimension(); ++j) {
        const double d = std::abs(xT[j] - x0[j]);
        if (d > best_abs) {
            best = j;
            best_abs = d;
        }
    }
    return best;
}

/// Signed change of the observable that moved the most.
inline double drift_indicator(const CoarseState& x0, const CoarseState& xT) {
    const std::size_t i = drift_component(x0, xT);
    return xT[i] - x0[i];
}

/// Ensemble drift between two snapshots of the same realizations.
struct DriftMeasurement {
    double h = 0.0;
    std::size_t component = 0;
    /// Standard error of h across realizations (0 for a single realization).
    double sigma = 0.0;
    CoarseState x0;
    CoarseState xT;
};

inline DriftMeasurement paired_drift(const std::vector<CoarseState>& before, const std::vector<CoarseState>& after) {
    if (before.size() != after.size() || before.empty())
        throw ConfigError("paired_drift: snapshot sizes differ");
    const auto m0 = mean_of(before);
    const auto mT = mean_of(after);
    DriftMeasurement d;
    d.component = drift_component(m0.mean, mT.mean);
    d.h = mT.mean[d.component] - m0.mean[d.component];
    const std::size_t n = before.size();
    if (n > 1) {
        double ss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            const double di = after[r][d.component] - before[r][d.component] - d.h;
            ss += di * di;
        }
        d.sigma = std::sqrt(ss / static_cast<double>(n - 1) / static_cast<double>(n));
    }
    d.x0 = m0.mean;
    d.xT = mT.mean;
    return d;
}

/// Standard error of the ensemble drift indicator over horizon T_s, started from x.
/// Zero for deterministic simulators.
template <CoarseSimulator S>
double estimate_noise_floor(const S& sim, const CoarseState& x, const typename S::params_type& p, double horizon,
                            const EnsembleSpec& ens) {
    if (!S::is_stochastic) return 0.0;
    if (ens.n_realizations < 2) throw ConfigError("estimate_noise_floor: needs at least 2 realizations");
    if (!(horizon > 0.0)) throw ConfigError("estimate_noise_floor: horizon must be positive");
    sim.check_parameters(p);
    auto e = lift_ensemble(sim, x, ens);
    const auto before = restrict_each(sim, e);
    e = evolve_ensemble(sim, std::move(e), p, horizon, ens.threads);
    return paired_drift(before, restrict_each(sim, e)).sigma;
}

} // namespace eqf
