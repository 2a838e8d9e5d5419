#pragma once

// Gillespie simulation of CO oxidation on a periodic square lattice.
//
// Events (A = CO, B = O, * = vacant site):
//   A(gas) + *    -> A*          rate alpha
//   A*            -> A(gas) + *  rate gamma
//   B2(gas) + 2*  -> 2B*         rate beta
//   A* + B*       -> 2*          rate k_r
//
// WellMixed pairs partners uniformly over the whole lattice; Nearest4 pairs
// adjacent sites on the 4-neighbour torus. Both are scaled so that, at random
// placement, expected coverage rates equal the mean-field equations.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "coarse_state.hpp"
#include "error.hpp"
#include "io.hpp"
#include "random.hpp"
#include "simulator.hpp"

namespace eqf::kmc {

enum class Site : std::uint8_t { Vacant = 0, A = 1, B = 2 };

enum class Mixing { WellMixed, Nearest4 };

inline std::string to_string(Mixing m) { return m == Mixing::WellMixed ? "well_mixed" : "nearest4"; }

inline Mixing parse_mixing(std::string_view s) {
    if (s == "well_mixed") return Mixing::WellMixed;
    if (s == "nearest4") return Mixing::Nearest4;
    throw ConfigError("kmc: unknown mixing '" + std::string(s) + "' (well_mixed | nearest4)");
}

struct KmcParams {
    double alpha = 1.6;
    double beta = 4.0;
    double gamma = 0.04;
    double k_r = 1.0;
    Mixing mixing = Mixing::WellMixed;

    static constexpr std::array<std::string_view, 4> names() { return {"alpha", "beta", "gamma", "k_r"}; }

    double get(std::string_view name) const {
        if (name == "alpha") return alpha;
        if (name == "beta") return beta;
        if (name == "gamma") return gamma;
        if (name == "k_r") return k_r;
        detail::unknown_parameter("kmc", name, names());
    }

    void set(std::string_view name, double v) {
        if (name == "alpha") alpha = v;
        else if (name == "beta") beta = v;
        else if (name == "gamma") gamma = v;
        else if (name == "k_r") k_r = v;
        else detail::unknown_parameter("kmc", name, names());
    }

    void validate() const {
        for (auto n : names()) {
            const double v = get(n);
            if (!std::isfinite(v) || v < 0.0)
                throw ConfigError("kmc: parameter '" + std::string(n) + "' must be finite and >= 0");
        }
    }
};

class Lattice {
public:
    Lattice() = default;

    Lattice(std::size_t width, std::size_t height) : width_(width), height_(height), sites_(width * height) {
        if (width < 2 || height < 2) throw ConfigError("kmc: lattice sides must be at least 2");
        if (width * height > std::numeric_limits<std::uint32_t>::max() / 2)
            throw ConfigError("kmc: lattice too large");
    }

    Lattice(std::size_t width, std::size_t height, std::vector<Site> sites) : Lattice(width, height) {
        if (sites.size() != sites_.size()) throw ConfigError("kmc: site count does not match lattice shape");
        sites_ = std::move(sites);
    }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t size() const noexcept { return sites_.size(); }

    Site operator[](std::size_t i) const { return sites_[i]; }
    Site at(std::size_t x, std::size_t y) const { return sites_[y * width_ + x]; }
    const std::vector<Site>& sites() const noexcept { return sites_; }

    std::size_t right(std::size_t i) const { return i % width_ + 1 == width_ ? i + 1 - width_ : i + 1; }
    std::size_t left(std::size_t i) const { return i % width_ == 0 ? i + width_ - 1 : i - 1; }
    std::size_t down(std::size_t i) const { return i + width_ >= size() ? i + width_ - size() : i + width_; }
    std::size_t up(std::size_t i) const { return i < width_ ? i + size() - width_ : i - width_; }

    /// Bond 2i joins i to right(i); bond 2i+1 joins i to down(i).
    std::size_t bond_count() const noexcept { return 2 * size(); }
    std::pair<std::size_t, std::size_t> bond_sites(std::size_t b) const {
        const std::size_t i = b / 2;
        return {i, (b & 1) ? down(i) : right(i)};
    }

    std::size_t count(Site s) const {
        std::size_t n = 0;
        for (Site v : sites_) n += (v == s);
        return n;
    }

    friend bool operator==(const Lattice&, const Lattice&) = default;

private:
    friend class PropensityTable;

    std::size_t width_ = 0, height_ = 0;
    std::vector<Site> sites_;
};

enum class Event : std::uint8_t { AdsorbA = 0, DesorbA = 1, AdsorbB2 = 2, React = 3 };
inline constexpr std::size_t kEventClasses = 4;

/// Partition of item ids into classes with O(1) insert, erase and uniform draw.
/// Erase moves the last member of the class into the vacated slot.
class ClassIndex {
public:
    static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

    ClassIndex() = default;
    ClassIndex(std::size_t items, std::size_t classes) : cls_(items, kNone), pos_(items, 0), members_(classes) {}

    void insert(std::size_t item, std::size_t c) {
        cls_[item] = static_cast<std::uint32_t>(c);
        pos_[item] = static_cast<std::uint32_t>(members_[c].size());
        members_[c].push_back(static_cast<std::uint32_t>(item));
    }

    void erase(std::size_t item) {
        const std::uint32_t c = cls_[item];
        if (c == kNone) return;
        auto& m = members_[c];
        const std::uint32_t last = m.back();
        m[pos_[item]] = last;
        pos_[last] = pos_[item];
        m.pop_back();
        cls_[item] = kNone;
    }

    std::size_t size(std::size_t c) const { return members_[c].size(); }
    std::size_t member(std::size_t c, std::size_t k) const { return members_[c][k]; }
    std::uint32_t class_of(std::size_t item) const { return cls_[item]; }

private:
    std::vector<std::uint32_t> cls_, pos_;
    std::vector<std::vector<std::uint32_t>> members_;
};

enum BondClass : std::uint8_t { kBondVV = 0, kBondAB = 1 };

/// Species and bond membership backing the event propensities. Owns no rates:
/// totals are recomputed from integer counts, so they never drift.
class PropensityTable {
public:
    PropensityTable() = default;

    PropensityTable(const Lattice& lat, bool track_bonds)
        : species_(lat.size(), 3), track_bonds_(track_bonds) {
        for (std::size_t i = 0; i < lat.size(); ++i) species_.insert(i, static_cast<std::size_t>(lat[i]));
        if (track_bonds_) {
            bonds_ = ClassIndex(lat.bond_count(), 2);
            for (std::size_t b = 0; b < lat.bond_count(); ++b) classify_bond(lat, b);
        }
    }

    bool tracks_bonds() const noexcept { return track_bonds_; }
    std::size_t n_sites() const noexcept { return n(Site::Vacant) + n(Site::A) + n(Site::B); }
    std::size_t n(Site s) const { return species_.size(static_cast<std::size_t>(s)); }
    std::size_t n_vv() const { return track_bonds_ ? bonds_.size(kBondVV) : 0; }
    std::size_t n_ab() const { return track_bonds_ ? bonds_.size(kBondAB) : 0; }

    /// Total propensity of each event class.
    std::array<double, kEventClasses> propensities(const KmcParams& p) const {
        const double nv = static_cast<double>(n(Site::Vacant));
        const double na = static_cast<double>(n(Site::A));
        const double nb = static_cast<double>(n(Site::B));
        const double N = static_cast<double>(n_sites());
        std::array<double, kEventClasses> q{p.alpha * nv, p.gamma * na, 0.0, 0.0};
        if (p.mixing == Mixing::WellMixed) {
            // Ordered pairs of distinct vacant sites: beta * nv (nv - 1) / N.
            q[2] = p.beta * nv * (nv - 1.0) / N;
            q[3] = 4.0 * p.k_r * na * nb / N;
        } else {
            q[2] = 0.5 * p.beta * static_cast<double>(n_vv());
            q[3] = p.k_r * static_cast<double>(n_ab());
        }
        return q;
    }

    /// Draw a member of a species uniformly.
    std::size_t random_site(Site s, Rng& rng) const {
        const auto c = static_cast<std::size_t>(s);
        return species_.member(c, uniform_index(rng, species_.size(c)));
    }

    std::size_t random_bond(BondClass c, Rng& rng) const { return bonds_.member(c, uniform_index(rng, bonds_.size(c))); }

    /// Change one site and repair every membership it touches.
    void set_site(Lattice& lat, std::size_t i, Site s) {
        if (lat.sites_[i] == s) return;
        std::array<std::size_t, 4> touching{};
        if (track_bonds_) {
            touching = {2 * i, 2 * i + 1, 2 * lat.left(i), 2 * lat.up(i) + 1};
            for (auto b : touching) bonds_.erase(b);
        }
        species_.erase(i);
        lat.sites_[i] = s;
        species_.insert(i, static_cast<std::size_t>(s));
        if (track_bonds_)
            for (auto b : touching) classify_bond(lat, b);
    }

    /// Compare against a fresh recount of the lattice.
    bool consistent_with(const Lattice& lat) const {
        const PropensityTable fresh(lat, track_bonds_);
        for (std::size_t i = 0; i < lat.size(); ++i)
            if (species_.class_of(i) != static_cast<std::uint32_t>(lat[i])) return false;
        for (std::size_t c = 0; c < 3; ++c)
            if (species_.size(c) != fresh.species_.size(c)) return false;
        if (track_bonds_) {
            for (std::size_t b = 0; b < lat.bond_count(); ++b)
                if (bonds_.class_of(b) != fresh.bonds_.class_of(b)) return false;
            if (n_vv() != fresh.n_vv() || n_ab() != fresh.n_ab()) return false;
        }
        return true;
    }

private:
    void classify_bond(const Lattice& lat, std::size_t b) {
        const auto [i, j] = lat.bond_sites(b);
        const Site si = lat[i], sj = lat[j];
        if (si == Site::Vacant && sj == Site::Vacant) bonds_.insert(b, kBondVV);
        else if ((si == Site::A && sj == Site::B) || (si == Site::B && sj == Site::A)) bonds_.insert(b, kBondAB);
    }

    ClassIndex species_;
    ClassIndex bonds_;
    bool track_bonds_ = false;
};

inline PropensityTable build_propensities(const Lattice& lat, const KmcParams& p) {
    return PropensityTable(lat, p.mixing == Mixing::Nearest4);
}

/// Smallest class c with r1·Q0 < cumulative[c]. Classes with zero
/// propensity are never returned.
inline std::size_t select_class(const std::array<double, kEventClasses>& q, double target) {
    double cum = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t c = 0; c < kEventClasses; ++c) {
        if (q[c] <= 0.0) continue;
        cum += q[c];
        last_positive = c;
        if (target < cum) return c;
    }
    return last_positive; // target rounded onto the upper end
}

inline double waiting_time(double q0, double r2) { return -std::log(r2) / q0; }

inline double total(const std::array<double, kEventClasses>& q) {
    double s = 0.0;
    for (double v : q) s += v;
    return s;
}

/// Apply one event of class `e` to uniformly chosen members.
inline void apply_event(Lattice& lat, PropensityTable& tbl, Event e, Mixing mixing, Rng& rng) {
    switch (e) {
    case Event::AdsorbA: tbl.set_site(lat, tbl.random_site(Site::Vacant, rng), Site::A); break;
    case Event::DesorbA: tbl.set_site(lat, tbl.random_site(Site::A, rng), Site::Vacant); break;
    case Event::AdsorbB2:
        if (mixing == Mixing::WellMixed) {
            const std::size_t i = tbl.random_site(Site::Vacant, rng);
            tbl.set_site(lat, i, Site::B);
            tbl.set_site(lat, tbl.random_site(Site::Vacant, rng), Site::B);
        } else {
            const auto [i, j] = lat.bond_sites(tbl.random_bond(kBondVV, rng));
            tbl.set_site(lat, i, Site::B);
            tbl.set_site(lat, j, Site::B);
        }
        break;
    case Event::React:
        if (mixing == Mixing::WellMixed) {
            const std::size_t i = tbl.random_site(Site::A, rng);
            const std::size_t j = tbl.random_site(Site::B, rng);
            tbl.set_site(lat, i, Site::Vacant);
            tbl.set_site(lat, j, Site::Vacant);
        } else {
            const auto [i, j] = lat.bond_sites(tbl.random_bond(kBondAB, rng));
            tbl.set_site(lat, i, Site::Vacant);
            tbl.set_site(lat, j, Site::Vacant);
        }
        break;
    }
}

struct StepResult {
    bool frozen = false; ///< no event possible; nothing was applied
    double dt = std::numeric_limits<double>::infinity();
    Event event = Event::AdsorbA;
};

/// One SSA step: r1 picks the class, r2 the waiting time.
inline StepResult gillespie_step(Lattice& lat, PropensityTable& tbl, const KmcParams& p, Rng& rng) {
    const auto q = tbl.propensities(p);
    const double q0 = total(q);
    if (!(q0 > 0.0)) return {.frozen = true};
    const double r1 = uniform_open01(rng);
    const double r2 = uniform_open01(rng);
    StepResult r;
    r.event = static_cast<Event>(select_class(q, r1 * q0));
    r.dt = waiting_time(q0, r2);
    apply_event(lat, tbl, r.event, p.mixing, rng);
    return r;
}

struct EvolveStats {
    std::uint64_t events = 0;
    bool frozen = false;
};

/// Run the SSA over [0, T]. The waiting time is drawn before the event: an
/// event that would fire after T is not applied, which leaves the state
/// distributed exactly as the jump process at time T.
inline EvolveStats evolve_kmc(Lattice& lat, PropensityTable& tbl, const KmcParams& p, double T, Rng& rng) {
    if (T < 0.0 || !std::isfinite(T)) throw ConfigError("kmc: horizon must be finite and >= 0");
    if (tbl.tracks_bonds() != (p.mixing == Mixing::Nearest4)) tbl = build_propensities(lat, p);
    EvolveStats st;
    double t = 0.0;
    while (true) {
        const auto q = tbl.propensities(p);
        const double q0 = total(q);
        if (!(q0 > 0.0)) {
            st.frozen = true;
            return st;
        }
        t += waiting_time(q0, uniform_open01(rng));
        if (t > T) return st;
        const auto e = static_cast<Event>(select_class(q, uniform_open01(rng) * q0));
        apply_event(lat, tbl, e, p.mixing, rng);
        ++st.events;
    }
}

inline CoarseState restrict_kmc(const Lattice& lat) {
    const double N = static_cast<double>(lat.size());
    return CoarseState({static_cast<double>(lat.count(Site::A)) / N, static_cast<double>(lat.count(Site::B)) / N},
                       {"theta_A", "theta_B"});
}

inline void check_coverages(double a, double b) {
    constexpr double slack = 1e-12;
    if (!(a >= 0.0) || !(b >= 0.0) || !(a + b <= 1.0 + slack))
        throw ConfigError("kmc: coverages (" + io::format_double(a) + ", " + io::format_double(b) +
                          ") violate theta_A, theta_B >= 0, theta_A + theta_B <= 1");
}

/// Exact-count lifting: round-half-to-even counts, placed by one random
/// permutation of site indices (first n_A get A, the next n_B get B).
inline Lattice lift_kmc(double theta_a, double theta_b, std::size_t width, std::size_t height, Rng& rng) {
    check_coverages(theta_a, theta_b);
    Lattice lat(width, height);
    const std::size_t N = lat.size();
    const auto na = static_cast<std::size_t>(std::nearbyint(theta_a * static_cast<double>(N)));
    auto nb = static_cast<std::size_t>(std::nearbyint(theta_b * static_cast<double>(N)));
    if (na + nb > N) nb = N - na;
    std::vector<std::uint32_t> perm(N);
    for (std::size_t i = 0; i < N; ++i) perm[i] = static_cast<std::uint32_t>(i);
    shuffle(perm, rng);
    std::vector<Site> sites(N, Site::Vacant);
    for (std::size_t k = 0; k < na; ++k) sites[perm[k]] = Site::A;
    for (std::size_t k = na; k < na + nb; ++k) sites[perm[k]] = Site::B;
    return Lattice(width, height, std::move(sites));
}

/// One character per site ('.', 'A', 'B'), one row per line.
inline std::string to_text(const Lattice& lat) {
    std::string s;
    s.reserve(lat.size() + lat.height());
    for (std::size_t y = 0; y < lat.height(); ++y) {
        for (std::size_t x = 0; x < lat.width(); ++x) {
            const Site v = lat.at(x, y);
            s += v == Site::A ? 'A' : v == Site::B ? 'B' : '.';
        }
        s += '\n';
    }
    return s;
}

inline Lattice from_text(std::string_view text) {
    std::vector<Site> sites;
    std::size_t width = 0, height = 0, col = 0;
    for (char ch : text) {
        if (ch == '\r') continue;
        if (ch == '\n') {
            if (col == 0) continue;
            if (width == 0) width = col;
            else if (col != width) throw ConfigError("kmc: ragged lattice text at row " + std::to_string(height + 1));
            ++height;
            col = 0;
            continue;
        }
        if (ch == '.') sites.push_back(Site::Vacant);
        else if (ch == 'A') sites.push_back(Site::A);
        else if (ch == 'B') sites.push_back(Site::B);
        else throw ConfigError(std::string("kmc: unexpected character '") + ch + "' in lattice text");
        ++col;
    }
    if (col != 0) {
        if (width == 0) width = col;
        else if (col != width) throw ConfigError("kmc: ragged lattice text at row " + std::to_string(height + 1));
        ++height;
    }
    return Lattice(width, height, std::move(sites));
}

/// Lattice, its membership table and the random stream that continues it.
struct KmcState {
    Lattice lattice;
    PropensityTable table;
    Rng rng;
    double time = 0.0;
};

class KmcSimulator {
public:
    using params_type = KmcParams;
    using micro_state = KmcState;
    static constexpr bool is_stochastic = true;

    explicit KmcSimulator(std::size_t width = 128, std::size_t height = 128) : width_(width), height_(height) {
        Lattice probe(width, height); // validates the shape
        (void)probe;
    }

    std::size_t width() const noexcept { return width_; }
    std::size_t height() const noexcept { return height_; }
    std::size_t coarse_dimension() const noexcept { return 2; }
    std::vector<std::string> labels() const { return {"theta_A", "theta_B"}; }
    double quantization_bound() const noexcept { return 1.0 / static_cast<double>(width_ * height_); }

    micro_state lift(const CoarseState& x, std::uint64_t seed) const {
        if (x.dimension() != 2) throw ConfigError("kmc: lift expects (theta_A, theta_B)");
        KmcState s;
        s.rng.seed(seed);
        s.lattice = lift_kmc(x[0], x[1], width_, height_, s.rng);
        s.table = PropensityTable(s.lattice, false); // rebuilt on first Nearest4 evolve
        return s;
    }

    micro_state evolve(micro_state s, const KmcParams& p, double horizon) const {
        if (horizon == 0.0) return s;
        evolve_kmc(s.lattice, s.table, p, horizon, s.rng);
        s.time += horizon;
        return s;
    }

    CoarseState restrict(const micro_state& s) const {
        const double N = static_cast<double>(s.lattice.size());
        return CoarseState({static_cast<double>(s.table.n(Site::A)) / N, static_cast<double>(s.table.n(Site::B)) / N},
                           labels());
    }

    void check_parameters(const KmcParams& p) const { p.validate(); }

private:
    std::size_t width_, height_;
};

/// Coverage time series sampled every `sample_dt` over [0, T], written as
/// CSV rows (t, theta_A, theta_B).
inline void write_series(std::ostream& out, const KmcSimulator& sim, KmcState s, const KmcParams& p, double T,
                         double sample_dt) {
    if (!(sample_dt > 0.0)) throw ConfigError("kmc: sample interval must be positive");
    io::CsvWriter csv(out);
    csv.header({"t", "theta_A", "theta_B"});
    if (!(T > 0.0)) return;
    const auto steps = static_cast<std::size_t>(std::ceil(T / sample_dt - 1e-9));
    auto x = sim.restrict(s);
    csv.row({0.0, x[0], x[1]});
    double t = 0.0;
    for (std::size_t k = 1; k <= steps; ++k) {
        const double next = std::min(T, static_cast<double>(k) * sample_dt);
        s = sim.evolve(std::move(s), p, next - t);
        t = next;
        x = sim.restrict(s);
        csv.row({t, x[0], x[1]});
    }
}

} // namespace eqf::kmc
