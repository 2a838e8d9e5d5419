#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace eqf {

/// Invalid configuration or violated precondition on user-supplied input.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A simulation produced a state it cannot continue from (non-finite
/// observable, inadmissible parameter reached mid-run, ...).
class SimulationError : public std::runtime_error {
public:
    SimulationError(const std::string& what, std::size_t realization = 0, std::uint64_t seed = 0)
        : std::runtime_error(what), realization_(realization), seed_(seed) {}

    std::size_t realization() const noexcept { return realization_; }
    std::uint64_t seed() const noexcept { return seed_; }

private:
    std::size_t realization_;
    std::uint64_t seed_;
};

/// An iterative method ran out of iterations or tripped a guard.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace eqf
