#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pam/error.hpp"

namespace pam {

enum class Boundary { periodic, absorbing };
enum class Scheme { explicit_euler, splitting };

inline std::string_view to_string(Boundary b) {
    return b == Boundary::periodic ? "periodic" : "absorbing";
}
inline std::string_view to_string(Scheme s) {
    return s == Scheme::splitting ? "splitting" : "explicit_euler";
}
inline Boundary parse_boundary(std::string_view s) {
    if (s == "periodic") return Boundary::periodic;
    if (s == "absorbing") return Boundary::absorbing;
    throw ValidationError("boundary: expected periodic|absorbing, got '" + std::string(s) + "'");
}
inline Scheme parse_scheme(std::string_view s) {
    if (s == "splitting") return Scheme::splitting;
    if (s == "explicit_euler") return Scheme::explicit_euler;
    throw ValidationError("scheme: expected splitting|explicit_euler, got '" + std::string(s) + "'");
}

/// One validation finding: the offending key and the rule it breaks.
struct Issue {
    std::string key;
    std::string rule;
};

struct Diagnostics {
    std::vector<Issue> errors;
    std::vector<Issue> warnings;

    bool ok() const noexcept { return errors.empty(); }
    void error(std::string key, std::string rule) { errors.push_back({std::move(key), std::move(rule)}); }
    void warn(std::string key, std::string rule) { warnings.push_back({std::move(key), std::move(rule)}); }

    /// Throws a ValidationError listing every error, if any.
    void raise_if_errors() const {
        if (errors.empty()) return;
        std::string msg;
        for (const auto& e : errors) {
            if (!msg.empty()) msg += "; ";
            msg += e.key + ": " + e.rule;
        }
        throw ValidationError(msg);
    }
};

namespace detail {
inline bool near_integer(double v, double rel = 1e-9) {
    return std::fabs(v - std::round(v)) <= rel * std::max(1.0, std::fabs(v));
}
}  // namespace detail

/// Spatial geometry shared by every field of a run: sites sit at
/// x_min + i*dx for i in [0, size).
struct Lattice {
    double x_min = 0.0;
    double dx = 1.0;
    std::size_t size = 0;
    Boundary boundary = Boundary::periodic;

    double x(std::size_t i) const noexcept { return x_min + static_cast<double>(i) * dx; }
    double x_max() const noexcept { return x_min + static_cast<double>(size) * dx; }
    /// Absolute lattice index of site 0, i.e. round(x_min / dx). Noise is
    /// addressed by absolute index.
    std::int64_t first_index() const noexcept { return std::llround(x_min / dx); }
    /// Nearest site to x (clamped to the lattice).
    std::size_t nearest(double xv) const noexcept {
        const double k = std::round((xv - x_min) / dx);
        if (k <= 0.0) return 0;
        if (k >= static_cast<double>(size - 1)) return size - 1;
        return static_cast<std::size_t>(k);
    }

    friend bool operator==(const Lattice&, const Lattice&) = default;
};

struct GridSpec {
    double dx = 0.05;
    double dt = 0.0025;
    double x_min = -8.0;
    double x_max = 8.0;
    Boundary boundary = Boundary::periodic;
    Scheme scheme = Scheme::splitting;
    double t_end = 1.0;
    std::vector<double> snapshot_times;

    std::size_t site_count() const { return static_cast<std::size_t>(std::llround((x_max - x_min) / dx)); }
    std::uint64_t step_count() const { return static_cast<std::uint64_t>(std::llround(t_end / dt)); }
    /// Step index at which snapshot time t is reached.
    std::uint64_t step_of(double t) const { return static_cast<std::uint64_t>(std::llround(t / dt)); }
    Lattice lattice() const { return {x_min, dx, site_count(), boundary}; }

    /// Checks every invariant; warnings carry the domain-size rule of thumb.
    Diagnostics validate() const {
        Diagnostics d;
        if (!(dx > 0.0) || !std::isfinite(dx)) d.error("dx", "dx > 0 required");
        if (!(dt > 0.0) || !std::isfinite(dt)) d.error("dt", "dt > 0 required");
        if (!(x_max > x_min)) d.error("x_max", "x_max > x_min required");
        if (!(t_end >= 0.0)) d.error("t_end", "t_end >= 0 required");
        if (!d.ok()) return d;
        if (!detail::near_integer((x_max - x_min) / dx))
            d.error("x_max", "x_max - x_min must be an integer multiple of dx");
        else if (site_count() < 3)
            d.error("x_max", "at least 3 lattice sites required");
        if (scheme == Scheme::explicit_euler && dt > dx * dx * (1.0 + 1e-12))
            d.error("dt", "dt <= dx^2 required for explicit_euler (CFL dt/(2dx^2) <= 1/2)");
        if (scheme == Scheme::splitting && boundary == Boundary::absorbing &&
            dt > 4.0 * dx * dx * (1.0 + 1e-12))
            d.error("dt", "dt <= 4 dx^2 required for splitting with absorbing boundary "
                          "(Crank-Nicolson positivity of each half step)");
        if (!detail::near_integer(t_end / dt)) d.error("t_end", "t_end must be a multiple of dt");
        double prev = -1.0;
        for (double s : snapshot_times) {
            if (s < 0.0 || s > t_end * (1.0 + 1e-12)) {
                d.error("snapshot_times", "snapshot time " + std::to_string(s) + " outside [0, t_end]");
            } else if (!detail::near_integer(s / dt, 1e-7)) {
                d.error("snapshot_times",
                        "snapshot time " + std::to_string(s) + " is not reachable by multiples of dt");
            }
            if (s <= prev) d.error("snapshot_times", "snapshot times must be strictly increasing");
            prev = s;
        }
        const double need = 8.0 * std::sqrt(t_end);
        if (x_max - x_min < need)
            d.warn("x_max", "domain length below 8*sqrt(t_end) = " + std::to_string(need) +
                                "; boundary effects may exceed statistical noise");
        return d;
    }
};

/// Positive constant initial data.
struct FlatInit {
    double c = 1.0;
};
/// Values given on the grid; must lie in [m, M] with 0 < m <= M < inf.
struct SampledInit {
    std::vector<double> values;
};
/// Unit point mass at x0, discretized as 1/dx at the nearest site.
struct DiracInit {
    double x0 = 0.0;
};

using InitialData = std::variant<FlatInit, SampledInit, DiracInit>;

inline std::string_view init_kind(const InitialData& init) {
    switch (init.index()) {
        case 0: return "flat";
        case 1: return "sampled";
        default: return "dirac";
    }
}

inline Diagnostics validate(const InitialData& init, const GridSpec& grid) {
    Diagnostics d;
    if (const auto* f = std::get_if<FlatInit>(&init)) {
        if (!(f->c > 0.0) || !std::isfinite(f->c)) d.error("init.c", "flat level must be positive and finite");
    } else if (const auto* s = std::get_if<SampledInit>(&init)) {
        if (s->values.size() != grid.site_count())
            d.error("init.values", "sampled data must have one value per lattice site");
        for (double v : s->values) {
            if (!(v > 0.0) || !std::isfinite(v)) {
                d.error("init.values", "sampled data must satisfy 0 < inf u0 <= sup u0 < inf");
                break;
            }
        }
    } else {
        const auto& dirac = std::get<DiracInit>(init);
        if (!(dirac.x0 >= grid.x_min && dirac.x0 < grid.x_max))
            d.error("init.x0", "dirac location must lie inside the domain");
    }
    return d;
}

/// Initial values on the lattice.
inline std::vector<double> materialize(const InitialData& init, const Lattice& lat) {
    std::vector<double> u(lat.size, 0.0);
    if (const auto* f = std::get_if<FlatInit>(&init)) {
        std::fill(u.begin(), u.end(), f->c);
    } else if (const auto* s = std::get_if<SampledInit>(&init)) {
        if (s->values.size() != lat.size) throw ValidationError("init.values: size mismatch with lattice");
        u = s->values;
    } else {
        u[lat.nearest(std::get<DiracInit>(init).x0)] = 1.0 / lat.dx;
    }
    return u;
}

}  // namespace pam
