#pragma once

// Mean-field CO oxidation kinetics on a catalytic surface:
//
//   dθA/dt = α(1 − θA − θB) − γ θA − 4 k_r θA θB
//   dθB/dt = 2β(1 − θA − θB)² − 4 k_r θA θB
//
// A = CO, B = O. Used as a deterministic coarse timestepper and as the
// reference oracle for the stochastic lattice model.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coarse_state.hpp"
#include "error.hpp"
#include "simulator.hpp"

namespace eqf::meanfield {

using Vec2 = std::array<double, 2>;
using Mat2 = std::array<std::array<double, 2>, 2>;

struct MfParams {
    double alpha = 1.6;
    double beta = 4.0;
    double gamma = 0.04;
    double k_r = 1.0;

    static constexpr std::array<std::string_view, 4> names() { return {"alpha", "beta", "gamma", "k_r"}; }

    double get(std::string_view name) const {
        if (name == "alpha") return alpha;
        if (name == "beta") return beta;
        if (name == "gamma") return gamma;
        if (name == "k_r") return k_r;
        detail::unknown_parameter("meanfield", name, names());
    }

    void set(std::string_view name, double v) {
        if (name == "alpha") alpha = v;
        else if (name == "beta") beta = v;
        else if (name == "gamma") gamma = v;
        else if (name == "k_r") k_r = v;
        else detail::unknown_parameter("meanfield", name, names());
    }

    void validate() const {
        for (auto n : names()) {
            const double v = get(n);
            if (!std::isfinite(v) || v < 0.0)
                throw ConfigError("meanfield: parameter '" + std::string(n) + "' must be finite and >= 0");
        }
    }
};

inline Vec2 rhs(const Vec2& theta, const MfParams& p) {
    const double a = theta[0], b = theta[1];
    const double vacant = 1.0 - a - b;
    const double reaction = 4.0 * p.k_r * a * b;
    return {p.alpha * vacant - p.gamma * a - reaction, 2.0 * p.beta * vacant * vacant - reaction};
}

inline Mat2 jacobian(const Vec2& theta, const MfParams& p) {
    const double a = theta[0], b = theta[1];
    const double vacant = 1.0 - a - b;
    return {{{-p.alpha - p.gamma - 4.0 * p.k_r * b, -p.alpha - 4.0 * p.k_r * a},
             {-4.0 * p.beta * vacant - 4.0 * p.k_r * b, -4.0 * p.beta * vacant - 4.0 * p.k_r * a}}};
}

/// Classical fixed-step RK4 from 0 to T; the last step is shortened to land on T.
inline Vec2 integrate(Vec2 theta, const MfParams& p, double T, double dt) {
    if (!(T > 0.0)) throw ConfigError("integrate: T must be positive");
    if (!(dt > 0.0) || dt > T * (1.0 + 1e-12)) throw ConfigError("integrate: need 0 < dt <= T");
    const auto full_steps = static_cast<std::size_t>(std::floor(T / dt * (1.0 + 1e-12)));
    const double remainder = T - static_cast<double>(full_steps) * dt;

    auto step = [&](double h) {
        const Vec2 k1 = rhs(theta, p);
        const Vec2 k2 = rhs({theta[0] + 0.5 * h * k1[0], theta[1] + 0.5 * h * k1[1]}, p);
        const Vec2 k3 = rhs({theta[0] + 0.5 * h * k2[0], theta[1] + 0.5 * h * k2[1]}, p);
        const Vec2 k4 = rhs({theta[0] + h * k3[0], theta[1] + h * k3[1]}, p);
        for (int i = 0; i < 2; ++i) theta[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        if (!std::isfinite(theta[0]) || !std::isfinite(theta[1]))
            throw SimulationError("integrate: non-finite state");
    };
    for (std::size_t s = 0; s < full_steps; ++s) step(dt);
    if (remainder > 1e-12 * T) step(remainder);
    return theta;
}

/// Eigenvalues of a 2x2 matrix ordered so that |slow| <= |fast|.
struct EigenPair {
    std::complex<double> slow;
    std::complex<double> fast;

    bool is_real() const noexcept { return slow.imag() == 0.0 && fast.imag() == 0.0; }
};

inline EigenPair eigenvalues(const Mat2& m) {
    const double tr = m[0][0] + m[1][1];
    const double det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    const double half = 0.5 * tr;
    const double disc = half * half - det;
    std::complex<double> l1, l2;
    if (disc >= 0.0) {
        // Avoid cancellation: compute the larger-magnitude root first.
        const double big = half + std::copysign(std::sqrt(disc), half == 0.0 ? 1.0 : half);
        const double small = big != 0.0 ? det / big : 0.0;
        l1 = big;
        l2 = small;
    } else {
        const double im = std::sqrt(-disc);
        l1 = {half, im};
        l2 = {half, -im};
    }
    if (std::abs(l1) < std::abs(l2)) std::swap(l1, l2);
    return {l2, l1};
}

enum class Stability { StableNode, Saddle, Other };

inline std::string_view to_string(Stability s) {
    switch (s) {
    case Stability::StableNode: return "StableNode";
    case Stability::Saddle: return "Saddle";
    case Stability::Other: return "Other";
    }
    return "Other";
}

/// |λ| below this is treated as degenerate (fold vicinity).
inline constexpr double kDegenerateEigenvalue = 1e-8;

inline Stability classify(const EigenPair& e) {
    if (!e.is_real()) return Stability::Other;
    const double s = e.slow.real(), f = e.fast.real();
    if (std::abs(s) < kDegenerateEigenvalue || std::abs(f) < kDegenerateEigenvalue) return Stability::Other;
    if (s < 0.0 && f < 0.0) return Stability::StableNode;
    if ((s > 0.0) != (f > 0.0)) return Stability::Saddle;
    return Stability::Other;
}

struct FixedPoint {
    Vec2 theta{};
    Stability stability = Stability::Other;
    EigenPair eigenvalues{};
};

inline FixedPoint characterize(const Vec2& theta, const MfParams& p) {
    const auto e = eigenvalues(jacobian(theta, p));
    return {theta, classify(e), e};
}

struct NewtonTrace {
    std::vector<Vec2> iterates;
    std::vector<double> residuals;
};

/// Damped Newton on rhs = 0; nullopt on failure (trace filled if supplied).
inline std::optional<FixedPoint> try_newton(Vec2 x, const MfParams& p, double tol, int max_iter,
                                            NewtonTrace* trace = nullptr) {
    auto norm = [](const Vec2& v) { return std::max(std::abs(v[0]), std::abs(v[1])); };
    Vec2 f = rhs(x, p);
    double r = norm(f);
    for (int it = 0; it <= max_iter; ++it) {
        if (trace) {
            trace->iterates.push_back(x);
            trace->residuals.push_back(r);
        }
        if (!std::isfinite(r)) return std::nullopt;
        if (r <= tol) return characterize(x, p);
        if (it == max_iter) break;
        const Mat2 J = jacobian(x, p);
        const double det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
        const double scale = std::abs(J[0][0] * J[1][1]) + std::abs(J[0][1] * J[1][0]);
        if (!(std::abs(det) > 1e-14 * scale)) return std::nullopt;
        const Vec2 dx{-(J[1][1] * f[0] - J[0][1] * f[1]) / det, -(-J[1][0] * f[0] + J[0][0] * f[1]) / det};
        // Backtrack by halving until the residual decreases.
        double lambda = 1.0;
        bool accepted = false;
        for (int k = 0; k < 40; ++k, lambda *= 0.5) {
            const Vec2 trial{x[0] + lambda * dx[0], x[1] + lambda * dx[1]};
            const Vec2 ft = rhs(trial, p);
            const double rt = norm(ft);
            if (rt < r) {
                x = trial;
                f = ft;
                r = rt;
                accepted = true;
                break;
            }
        }
        if (!accepted) return std::nullopt;
    }
    return std::nullopt;
}

inline FixedPoint newton_fixed_point(const Vec2& guess, const MfParams& p, double tol = 1e-12, int max_iter = 100) {
    if (!(tol > 0.0)) throw ConfigError("newton_fixed_point: tol must be positive");
    NewtonTrace trace;
    if (auto fp = try_newton(guess, p, tol, max_iter, &trace)) return *fp;
    std::string msg = "newton_fixed_point: no convergence from (" + std::to_string(guess[0]) + ", " +
                      std::to_string(guess[1]) + "); residual trace:";
    for (double r : trace.residuals) msg += " " + std::to_string(r);
    throw ConvergenceError(msg);
}

inline bool in_simplex(const Vec2& t, double eps = 1e-9) {
    return t[0] >= -eps && t[1] >= -eps && t[0] + t[1] <= 1.0 + eps;
}

inline bool on_simplex_boundary(const Vec2& t, double eps = 1e-9) {
    return t[0] <= eps || t[1] <= eps || t[0] + t[1] >= 1.0 - eps;
}

struct ScanOptions {
    /// Guesses per simplex edge of the multistart lattice.
    int guess_lattice = 21;
    double newton_tol = 1e-12;
    int newton_max_iter = 100;
    double dedup_distance = 1e-6;
    /// The B-poisoned corner (0, 1) is a fixed point for every parameter value;
    /// it is not part of the interior bifurcation structure and is skipped by default.
    bool include_boundary = false;
    double fold_width = 1e-6;
};

/// All physical fixed points found by multistart Newton, sorted by θA.
inline std::vector<FixedPoint> find_fixed_points(const MfParams& p, const ScanOptions& opt = {}) {
    std::vector<FixedPoint> found;
    const int n = opt.guess_lattice;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; i + j < n; ++j) {
            const Vec2 guess{static_cast<double>(i) / (n - 1), static_cast<double>(j) / (n - 1)};
            auto fp = try_newton(guess, p, opt.newton_tol, opt.newton_max_iter);
            if (!fp || !in_simplex(fp->theta)) continue;
            if (!opt.include_boundary && on_simplex_boundary(fp->theta)) continue;
            const bool dup = std::any_of(found.begin(), found.end(), [&](const FixedPoint& q) {
                return std::hypot(q.theta[0] - fp->theta[0], q.theta[1] - fp->theta[1]) < opt.dedup_distance;
            });
            if (!dup) found.push_back(*fp);
        }
    }
    std::sort(found.begin(), found.end(), [](const FixedPoint& a, const FixedPoint& b) { return a.theta[0] < b.theta[0]; });
    return found;
}

struct Fold {
    double parameter = 0.0;
    Vec2 theta{};
};

struct BranchRow {
    double parameter = 0.0;
    std::vector<FixedPoint> points;
};

struct BranchScan {
    std::string parameter;
    std::vector<BranchRow> rows;
    std::vector<Fold> folds;
};

/// Refine a fold between lo and hi, where the fixed-point count differs, by
/// bisection on the parameter down to opt.fold_width.
inline Fold refine_fold(const ParameterAxis<MfParams>& axis, double lo, double hi, const ScanOptions& opt = {}) {
    const std::size_t count_lo = find_fixed_points(axis.at(lo), opt).size();
    const std::size_t count_hi = find_fixed_points(axis.at(hi), opt).size();
    if (count_lo == count_hi) throw ConfigError("refine_fold: fixed-point count does not change across the bracket");
    while (std::abs(hi - lo) > opt.fold_width) {
        const double mid = 0.5 * (lo + hi);
        if (find_fixed_points(axis.at(mid), opt).size() == count_lo) lo = mid;
        else hi = mid;
    }
    // On the side with more fixed points the colliding pair is the closest one.
    const double richer = count_lo > count_hi ? lo : hi;
    const auto pts = find_fixed_points(axis.at(richer), opt);
    Fold fold{richer, pts.empty() ? Vec2{} : pts.front().theta};
    double best = INFINITY;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        for (std::size_t j = i + 1; j < pts.size(); ++j) {
            const double d = std::hypot(pts[i].theta[0] - pts[j].theta[0], pts[i].theta[1] - pts[j].theta[1]);
            if (d < best) {
                best = d;
                fold.theta = {0.5 * (pts[i].theta[0] + pts[j].theta[0]), 0.5 * (pts[i].theta[1] + pts[j].theta[1])};
            }
        }
    }
    return fold;
}

/// Fixed points over a strictly monotone grid of one parameter, with folds
/// located where the number of fixed points changes between grid cells.
inline BranchScan branch_scan(const MfParams& base, const std::string& parameter, const std::vector<double>& grid,
                              const ScanOptions& opt = {}) {
    // is_sorted with a non-strict comparator rejects repeats as well.
    const bool increasing = std::is_sorted(grid.begin(), grid.end(), std::less_equal<>{});
    const bool decreasing = std::is_sorted(grid.begin(), grid.end(), std::greater_equal<>{});
    if (!increasing && !decreasing) throw ConfigError("branch_scan: grid must be strictly monotone");
    const ParameterAxis<MfParams> axis(base, parameter);
    BranchScan scan{parameter, {}, {}};
    for (double v : grid) scan.rows.push_back({v, find_fixed_points(axis.at(v), opt)});
    for (std::size_t i = 1; i < scan.rows.size(); ++i) {
        if (scan.rows[i].points.size() != scan.rows[i - 1].points.size())
            scan.folds.push_back(refine_fold(axis, scan.rows[i - 1].parameter, scan.rows[i].parameter, opt));
    }
    return scan;
}

/// Deterministic coarse timestepper backed by RK4 integration of the mean-field model.
class MeanFieldSimulator {
public:
    using params_type = MfParams;
    using micro_state = Vec2;
    static constexpr bool is_stochastic = false;

    explicit MeanFieldSimulator(double dt = 1e-3) : dt_(dt) {
        if (!(dt > 0.0)) throw ConfigError("meanfield: dt must be positive");
    }

    double dt() const noexcept { return dt_; }
    std::size_t coarse_dimension() const noexcept { return 2; }
    std::vector<std::string> labels() const { return {"theta_A", "theta_B"}; }
    double quantization_bound() const noexcept { return 0.0; }

    micro_state lift(const CoarseState& x, std::uint64_t /*seed*/) const {
        if (x.dimension() != 2) throw ConfigError("meanfield: lift expects (theta_A, theta_B)");
        return {x[0], x[1]};
    }

    micro_state evolve(micro_state u, const MfParams& p, double horizon) const {
        if (horizon < 0.0) throw ConfigError("meanfield: negative horizon");
        if (horizon == 0.0) return u;
        return integrate(u, p, horizon, std::min(dt_, horizon));
    }

    CoarseState restrict(const micro_state& u) const { return CoarseState({u[0], u[1]}, labels()); }

    void check_parameters(const MfParams& p) const { p.validate(); }

private:
    double dt_;
};

} // namespace eqf::meanfield
