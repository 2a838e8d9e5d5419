#pragma once

#include <concepts>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coarse_state.hpp"
#include "error.hpp"

namespace eqf {

/// A named set of real model parameters that can be read and overwritten by name.
template <class P>
concept ParameterSet = std::copyable<P> && requires(const P& cp, P& p, std::string_view name, double v) {
    { cp.get(name) } -> std::convertible_to<double>;
    p.set(name, v);
    { P::names() };
};

/// Microscopic simulator seen through lift / evolve / restrict.
///
/// A micro_state carries everything needed to continue the run, including
/// the random stream of a stochastic simulator, so that evolve is a pure
/// function of (micro_state, params, T) and the same state can be threaded
/// through many calls without re-lifting.
template <class S>
concept CoarseSimulator = requires(const S& sim, const CoarseState& x, std::uint64_t seed,
                                   typename S::micro_state u, const typename S::micro_state& cu,
                                   const typename S::params_type& p, double horizon) {
    requires ParameterSet<typename S::params_type>;
    requires std::copyable<typename S::micro_state>;
    { S::is_stochastic } -> std::convertible_to<bool>;
    { sim.coarse_dimension() } -> std::convertible_to<std::size_t>;
    { sim.labels() } -> std::convertible_to<std::vector<std::string>>;
    { sim.lift(x, seed) } -> std::same_as<typename S::micro_state>;
    { sim.evolve(std::move(u), p, horizon) } -> std::same_as<typename S::micro_state>;
    { sim.restrict(cu) } -> std::same_as<CoarseState>;
    { sim.quantization_bound() } -> std::convertible_to<double>;
    sim.check_parameters(p);
};

/// One scalar parameter of a parameter set singled out as the bifurcation /
/// control parameter; everything else stays at its base value.
template <ParameterSet P>
struct ParameterAxis {
    P base;
    std::string name;

    ParameterAxis(P base_params, std::string parameter) : base(std::move(base_params)), name(std::move(parameter)) {
        (void)base.get(name); // throws on unknown name
    }

    P at(double value) const {
        P p = base;
        p.set(name, value);
        return p;
    }

    double nominal() const { return base.get(name); }
};

namespace detail {

template <class Names>
[[noreturn]] inline void unknown_parameter(std::string_view model, std::string_view name, const Names& names) {
    std::string msg = std::string(model) + ": unknown parameter '" + std::string(name) + "' (known:";
    for (auto n : names) msg += " " + std::string(n);
    throw ConfigError(msg + ")");
}

} // namespace detail

} // namespace eqf
