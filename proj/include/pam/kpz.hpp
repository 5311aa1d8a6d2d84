#pragma once

// Cole-Hopf heights and the rescaled narrow-wedge field
//   Upsilon_t(x) = (H(t, t^{2/3} x) + t/24) / t^{1/3}
// with the parabola-adjusted functionals built on it.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "pam/error.hpp"
#include "pam/she/solver.hpp"

namespace pam {

/// h_i = log u_i on a lattice, at time t.
struct HeightField {
    double t = 0.0;
    std::vector<double> values;
    Lattice lattice;
};

/// Upsilon_t sampled on an arbitrary increasing grid of rescaled positions.
struct UpsilonField {
    double t = 0.0;
    std::vector<double> x;  // rescaled coordinate; physical position is t^{2/3} x
    std::vector<double> values;
};

/// Elementwise log. Throws DomainError naming the first site with u <= 0
/// (a sign of the explicit scheme or a diverged run).
inline HeightField cole_hopf(const LatticeField& field) {
    HeightField h{field.t, std::vector<double>(field.values.size()), field.lattice};
    for (std::size_t i = 0; i < field.values.size(); ++i) {
        const double u = field.values[i];
        if (!(u > 0.0) || !std::isfinite(u)) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "cole_hopf: u = %.6g at site %zu (x = %.6g) is not positive and finite",
                          u, i, field.lattice.x(i));
            throw DomainError(buf);
        }
        h.values[i] = std::log(u);
    }
    return h;
}

namespace detail {
/// Linear interpolation of lattice values at physical position xp.
inline double interpolate(const HeightField& h, double xp) {
    const Lattice& lat = h.lattice;
    const double s = (xp - lat.x_min) / lat.dx;
    const double tol = 1e-9;
    const double last = static_cast<double>(lat.size - 1);
    if (s < -tol || s > last + tol) throw ValidationError("upsilon: requested position outside the simulated domain");
    const double sc = std::clamp(s, 0.0, last);
    auto i = static_cast<std::size_t>(std::floor(sc));
    if (i >= lat.size - 1) i = lat.size - 2;
    const double w = sc - static_cast<double>(i);
    if (w == 0.0) return h.values[i];
    return (1.0 - w) * h.values[i] + w * h.values[i + 1];
}
}  // namespace detail

/// Upsilon_t at the rescaled positions xs, interpolating h linearly in
/// physical space. Meant for heights from dirac initial data.
inline UpsilonField upsilon(const HeightField& h, const std::vector<double>& xs) {
    const double t = h.t;
    if (!(t > 0.0)) throw ValidationError("upsilon: t > 0 required");
    const double scale = std::cbrt(t) * std::cbrt(t);  // t^{2/3}
    const double shrink = std::cbrt(t);                 // t^{1/3}
    UpsilonField out{t, xs, std::vector<double>(xs.size())};
    for (std::size_t k = 0; k < xs.size(); ++k)
        out.values[k] = (detail::interpolate(h, scale * xs[k]) + t / 24.0) / shrink;
    return out;
}

/// Upsilon_t on the evenly spaced rescaled grid lo, lo + step, ..., <= hi.
inline UpsilonField upsilon(const HeightField& h, double lo, double hi, double step) {
    if (!(step > 0.0) || !(hi >= lo)) throw ValidationError("upsilon: need step > 0 and hi >= lo");
    std::vector<double> xs;
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (std::size_t k = 0; k < n; ++k) xs.push_back(lo + static_cast<double>(k) * step);
    return upsilon(h, xs);
}

/// Upsilon_t on the lattice sites themselves (no interpolation): x = x_i / t^{2/3}.
inline UpsilonField upsilon_on_sites(const HeightField& h) {
    const double t = h.t;
    if (!(t > 0.0)) throw ValidationError("upsilon: t > 0 required");
    const double scale = std::cbrt(t) * std::cbrt(t);
    const double shrink = std::cbrt(t);
    UpsilonField out{t, std::vector<double>(h.values.size()), std::vector<double>(h.values.size())};
    for (std::size_t i = 0; i < h.values.size(); ++i) {
        out.x[i] = h.lattice.x(i) / scale;
        out.values[i] = (h.values[i] + t / 24.0) / shrink;
    }
    return out;
}

struct SupResult {
    double value;
    double argsup;
};

/// max over grid points x in [lo, hi] of Upsilon(x) + nu x^2 / 2; ties go to
/// the leftmost maximiser.
inline SupResult sup_parabola(const UpsilonField& ups, double nu, double lo, double hi) {
    SupResult best{-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::quiet_NaN()};
    const double tol = 1e-12 * std::max(1.0, std::max(std::fabs(lo), std::fabs(hi)));
    if (!ups.x.empty() && (lo < ups.x.front() - tol || hi > ups.x.back() + tol))
        throw ValidationError("sup_parabola: window exceeds the available grid");
    for (std::size_t k = 0; k < ups.x.size(); ++k) {
        const double x = ups.x[k];
        if (x < lo - tol || x > hi + tol) continue;
        const double v = ups.values[k] + 0.5 * nu * x * x;
        if (v > best.value) best = {v, x};
    }
    if (std::isnan(best.argsup)) throw ValidationError("sup_parabola: window contains no grid point");
    return best;
}

/// sup over grid points x in [a, a + half_len] of
/// |Upsilon(x) + x^2/2 - Upsilon(a) - a^2/2|. `a` is snapped to the nearest
/// grid point.
inline double modulus_deviation(const UpsilonField& ups, double a, double half_len) {
    if (ups.x.empty()) throw ValidationError("modulus_deviation: empty field");
    if (!(half_len >= 0.0)) throw ValidationError("modulus_deviation: half_len >= 0 required");
    const double tol = 1e-9 * std::max(1.0, std::fabs(a) + half_len);
    if (a < ups.x.front() - tol || a + half_len > ups.x.back() + tol)
        throw ValidationError("modulus_deviation: interval outside the grid");
    std::size_t ia = 0;
    for (std::size_t k = 1; k < ups.x.size(); ++k)
        if (std::fabs(ups.x[k] - a) < std::fabs(ups.x[ia] - a)) ia = k;
    const double base = ups.values[ia] + 0.5 * ups.x[ia] * ups.x[ia];
    double dev = 0.0;
    for (std::size_t k = ia; k < ups.x.size() && ups.x[k] <= a + half_len + tol; ++k)
        dev = std::max(dev, std::fabs(ups.values[k] + 0.5 * ups.x[k] * ups.x[k] - base));
    return dev;
}

/// CSV of (x_tilde, upsilon) with a metadata comment line.
inline void write_upsilon_csv(std::ostream& os, const UpsilonField& ups, const std::string& meta) {
    os << "# " << meta << "\n" << "x_tilde,upsilon\n";
    char buf[64];
    for (std::size_t k = 0; k < ups.x.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", ups.x[k], ups.values[k]);
        os << buf;
    }
}

}  // namespace pam
