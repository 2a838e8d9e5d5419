#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"

namespace eqf {

/// Low-dimensional observable vector exchanged with a simulator.
/// Values are always finite; labels name each observable.
class CoarseState {
public:
    CoarseState() = default;

    CoarseState(std::vector<double> values, std::vector<std::string> labels = {})
        : values_(std::move(values)), labels_(std::move(labels)) {
        if (labels_.empty()) {
            for (std::size_t i = 0; i < values_.size(); ++i)
                labels_.push_back("x" + std::to_string(i));
        }
        if (labels_.size() != values_.size())
            throw ConfigError("CoarseState: label count does not match dimension");
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (!std::isfinite(values_[i]))
                throw SimulationError("CoarseState: non-finite value for observable '" + labels_[i] + "'");
        }
    }

    CoarseState(std::initializer_list<double> values) : CoarseState(std::vector<double>(values)) {}

    std::size_t dimension() const noexcept { return values_.size(); }
    double operator[](std::size_t i) const { return values_[i]; }
    std::span<const double> values() const noexcept { return values_; }
    const std::vector<std::string>& labels() const noexcept { return labels_; }

    CoarseState with_labels(std::vector<std::string> labels) const {
        return CoarseState(values_, std::move(labels));
    }

    friend bool operator==(const CoarseState& a, const CoarseState& b) { return a.values_ == b.values_; }

private:
    std::vector<double> values_;
    std::vector<std::string> labels_;
};

inline double max_abs_difference(const CoarseState& a, const CoarseState& b) {
    if (a.dimension() != b.dimension())
        throw ConfigError("max_abs_difference: dimension mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.dimension(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace eqf
