#pragma once

// Buyer/seller agents with leaky integrate-and-fire moods.
//
//   dx_i/dt = -gamma x_i + (jumps of +eps_plus at rate nu_plus, -eps_minus at rate nu_minus)
//   nu_+- = nu_ex_+- + g R_+-
//
// An agent at x >= 1 buys, at x <= -1 sells; either way it resets to 0.
// R_+- are the buy/sell counts of the previous reporting window per agent
// and unit time. Time advances in fixed substeps: exact decay, Poisson
// jumps, then one threshold check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "coarse_state.hpp"
#include "error.hpp"
#include "io.hpp"
#include "random.hpp"
#include "simulator.hpp"

namespace eqf::agents {

struct AgentParams {
    double nu_ex_plus = 20.0;
    double nu_ex_minus = 20.0;
    double eps_plus = 0.075;
    double eps_minus = 0.075;
    double gamma = 1.0;
    double g = 38.0;
    double delta_t = 0.25;
    double dt_sim = 0.0125;
    std::size_t N = 5000;

    static constexpr std::array<std::string_view, 8> names() {
        return {"nu_ex_plus", "nu_ex_minus", "eps_plus", "eps_minus", "gamma", "g", "delta_t", "dt_sim"};
    }

    double get(std::string_view name) const {
        if (name == "nu_ex_plus") return nu_ex_plus;
        if (name == "nu_ex_minus") return nu_ex_minus;
        if (name == "eps_plus") return eps_plus;
        if (name == "eps_minus") return eps_minus;
        if (name == "gamma") return gamma;
        if (name == "g") return g;
        if (name == "delta_t") return delta_t;
        if (name == "dt_sim") return dt_sim;
        detail::unknown_parameter("agents", name, names());
    }

    void set(std::string_view name, double v) {
        if (name == "nu_ex_plus") nu_ex_plus = v;
        else if (name == "nu_ex_minus") nu_ex_minus = v;
        else if (name == "eps_plus") eps_plus = v;
        else if (name == "eps_minus") eps_minus = v;
        else if (name == "gamma") gamma = v;
        else if (name == "g") g = v;
        else if (name == "delta_t") delta_t = v;
        else if (name == "dt_sim") dt_sim = v;
        else detail::unknown_parameter("agents", name, names());
    }

    /// Substeps per reporting window.
    std::size_t substeps_per_window() const {
        return static_cast<std::size_t>(std::llround(delta_t / dt_sim));
    }

    void validate() const {
        for (auto n : names())
            if (!std::isfinite(get(n))) throw ConfigError("agents: parameter '" + std::string(n) + "' must be finite");
        if (nu_ex_plus < 0.0 || nu_ex_minus < 0.0) throw ConfigError("agents: exogenous rates must be >= 0");
        if (!(eps_plus > 0.0 && eps_plus < 2.0) || !(eps_minus > 0.0 && eps_minus < 2.0))
            throw ConfigError("agents: jump sizes must lie in (0, 2)");
        if (gamma < 0.0) throw ConfigError("agents: gamma must be >= 0");
        if (g < 0.0) throw ConfigError("agents: g must be >= 0");
        if (!(dt_sim > 0.0) || dt_sim > delta_t) throw ConfigError("agents: need 0 < dt_sim <= delta_t");
        const double ratio = delta_t / dt_sim;
        if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio)
            throw ConfigError("agents: delta_t must be an integer multiple of dt_sim");
        if (N < 1) throw ConfigError("agents: N must be >= 1");
    }
};

struct Population {
    std::vector<double> x;
    std::uint64_t window_buys = 0;
    std::uint64_t window_sells = 0;
    /// Rates of the last completed window.
    double R_plus = 0.0;
    double R_minus = 0.0;
    double time = 0.0;

    std::size_t size() const noexcept { return x.size(); }
};

/// Current jump rates: nu_+- = nu_ex_+- + g R_+-.
inline std::pair<double, double> jump_rates(const Population& pop, const AgentParams& p) {
    return {p.nu_ex_plus + p.g * pop.R_plus, p.nu_ex_minus + p.g * pop.R_minus};
}

/// One substep of length dt_sim. Jump counts are drawn as a Poisson total
/// over the population, each jump landing on a uniformly chosen agent; this
/// is the same law as independent Poisson(nu dt) counts per agent.
inline void step_substep(Population& pop, const AgentParams& p, Rng& rng, std::vector<double>& scratch) {
    const std::size_t n = pop.size();
    const double decay = std::exp(-p.gamma * p.dt_sim);
    const auto [nu_p, nu_m] = jump_rates(pop, p);
    scratch.assign(n, 0.0);
    auto scatter = [&](double rate, double step) {
        const double mean = rate * p.dt_sim * static_cast<double>(n);
        if (!(mean > 0.0)) return;
        std::poisson_distribution<std::uint64_t> total(mean);
        const std::uint64_t k = total(rng);
        for (std::uint64_t j = 0; j < k; ++j) scratch[uniform_index(rng, n)] += step;
    };
    scatter(nu_p, p.eps_plus);
    scatter(nu_m, -p.eps_minus);
    for (std::size_t i = 0; i < n; ++i) {
        double xi = pop.x[i] * decay + scratch[i];
        if (xi >= 1.0) {
            ++pop.window_buys;
            xi = 0.0;
        } else if (xi <= -1.0) {
            ++pop.window_sells;
            xi = 0.0;
        }
        pop.x[i] = xi;
    }
    pop.time += p.dt_sim;
}

inline void step_substep(Population& pop, const AgentParams& p, Rng& rng) {
    std::vector<double> scratch;
    step_substep(pop, p, rng, scratch);
}

/// Publish the window's rates and start a new window.
inline void close_window(Population& pop, const AgentParams& p) {
    const double denom = static_cast<double>(pop.size()) * p.delta_t;
    pop.R_plus = static_cast<double>(pop.window_buys) / denom;
    pop.R_minus = static_cast<double>(pop.window_sells) / denom;
    pop.window_buys = 0;
    pop.window_sells = 0;
}

/// Number of whole reporting windows covering T (rounded up).
inline std::size_t windows_for(double T, const AgentParams& p) {
    if (T < 0.0 || !std::isfinite(T)) throw ConfigError("agents: horizon must be finite and >= 0");
    return static_cast<std::size_t>(std::ceil(T / p.delta_t - 1e-9));
}

/// Observer called after every closed window.
struct NoObserver {
    void operator()(const Population&) const {}
};

template <class Observer = NoObserver>
void evolve_agents(Population& pop, const AgentParams& p, double T, Rng& rng, Observer&& observe = {}) {
    const std::size_t windows = windows_for(T, p);
    const std::size_t sub = p.substeps_per_window();
    std::vector<double> scratch;
    for (std::size_t w = 0; w < windows; ++w) {
        for (std::size_t s = 0; s < sub; ++s) step_substep(pop, p, rng, scratch);
        close_window(pop, p);
        observe(pop);
    }
}

enum class Lifting { Delta, Gaussian };

/// Every agent at x_bar (Delta), or a zero-mean truncated Gaussian spread
/// around it (Gaussian). The mean is x_bar exactly in both cases.
inline Population lift_agents(double x_bar, std::size_t N, Rng& rng, Lifting mode = Lifting::Delta,
                              double spread = 0.0) {
    if (!(x_bar > -1.0 && x_bar < 1.0)) throw ConfigError("agents: x_bar must lie in (-1, 1)");
    if (N < 1) throw ConfigError("agents: N must be >= 1");
    Population pop;
    pop.x.assign(N, x_bar);
    if (mode == Lifting::Delta || spread <= 0.0 || N == 1) return pop;

    std::normal_distribution<double> normal(0.0, spread);
    std::vector<double> d(N);
    for (auto& v : d) {
        do v = normal(rng);
        while (!(x_bar + v > -1.0 && x_bar + v < 1.0));
    }
    double mean = 0.0;
    for (double v : d) mean += v;
    mean /= static_cast<double>(N);
    double lo = 0.0, hi = 0.0;
    for (auto& v : d) {
        v -= mean;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    // Recentering may push a tail agent out of (-1, 1); shrink the deviations
    // (which keeps their mean at zero) until all fit.
    const double room = 1.0 - 1e-12;
    double scale = 1.0;
    if (x_bar + hi >= room) scale = std::min(scale, (room - x_bar) / hi);
    if (x_bar + lo <= -room) scale = std::min(scale, (-room - x_bar) / lo);
    for (std::size_t i = 0; i < N; ++i) pop.x[i] = x_bar + scale * d[i];
    return pop;
}

/// Mean taken about the first agent's state, so a delta population
/// restricts to its lifted value exactly.
inline double mean_state(const Population& pop) {
    if (pop.x.empty()) return 0.0;
    const double ref = pop.x.front();
    double s = 0.0, c = 0.0;
    for (double v : pop.x) {
        const double d = v - ref;
        const double t = s + d;
        c += std::abs(s) >= std::abs(d) ? (s - t) + d : (d - t) + s;
        s = t;
    }
    return ref + (s + c) / static_cast<double>(pop.size());
}

inline CoarseState restrict_agents(const Population& pop) { return CoarseState({mean_state(pop)}, {"x_bar"}); }

/// Counts in 100 equal bins over (-1, 1).
inline std::array<std::size_t, 100> histogram(const Population& pop) {
    std::array<std::size_t, 100> h{};
    for (double v : pop.x) {
        auto b = static_cast<long>(std::floor((v + 1.0) * 50.0));
        h[static_cast<std::size_t>(std::clamp(b, 0L, 99L))]++;
    }
    return h;
}

inline void write_histogram(std::ostream& out, const Population& pop) {
    io::CsvWriter csv(out);
    csv.header({"bin_lo", "bin_hi", "count"});
    const auto h = histogram(pop);
    for (std::size_t b = 0; b < h.size(); ++b)
        csv.row({-1.0 + 0.02 * static_cast<double>(b), -1.0 + 0.02 * static_cast<double>(b + 1),
                 static_cast<double>(h[b])});
}

struct AgentState {
    Population pop;
    Rng rng;
};

class AgentSimulator {
public:
    using params_type = AgentParams;
    using micro_state = AgentState;
    static constexpr bool is_stochastic = true;

    explicit AgentSimulator(std::size_t N = 5000, Lifting mode = Lifting::Delta, double spread = 0.0)
        : N_(N), mode_(mode), spread_(spread) {
        if (N < 1) throw ConfigError("agents: N must be >= 1");
        if (spread < 0.0) throw ConfigError("agents: lifting spread must be >= 0");
    }

    std::size_t population_size() const noexcept { return N_; }
    std::size_t coarse_dimension() const noexcept { return 1; }
    std::vector<std::string> labels() const { return {"x_bar"}; }
    double quantization_bound() const noexcept { return mode_ == Lifting::Delta ? 0.0 : 1e-12; }

    micro_state lift(const CoarseState& x, std::uint64_t seed) const {
        if (x.dimension() != 1) throw ConfigError("agents: lift expects (x_bar)");
        AgentState s;
        s.rng.seed(seed);
        s.pop = lift_agents(x[0], N_, s.rng, mode_, spread_);
        return s;
    }

    micro_state evolve(micro_state s, const AgentParams& p, double horizon) const {
        evolve_agents(s.pop, p, horizon, s.rng);
        return s;
    }

    CoarseState restrict(const micro_state& s) const { return restrict_agents(s.pop); }

    void check_parameters(const AgentParams& p) const {
        p.validate();
        if (p.N != N_)
            throw ConfigError("agents: parameter N = " + std::to_string(p.N) + " differs from the simulator's " +
                              std::to_string(N_));
    }

private:
    std::size_t N_;
    Lifting mode_;
    double spread_;
};

/// Per-window series (t, x_bar, R_plus, R_minus) over [0, T], starting with t = 0.
inline void write_series(std::ostream& out, AgentState s, const AgentParams& p, double T) {
    io::CsvWriter csv(out);
    csv.header({"t", "x_bar", "R_plus", "R_minus"});
    if (windows_for(T, p) == 0) return;
    const double t0 = s.pop.time;
    csv.row({0.0, mean_state(s.pop), s.pop.R_plus, s.pop.R_minus});
    evolve_agents(s.pop, p, T, s.rng,
                  [&](const Population& pop) { csv.row({pop.time - t0, mean_state(pop), pop.R_plus, pop.R_minus}); });
}

} // namespace eqf::agents
