#pragma once

// Monte Carlo tail probabilities, exponent fits, moment growth rates and the
// distributional checks (convolution identity, FKG, argsup localization,
// modulus and box-infimum tails).
//
// Every experiment reads run r from NoiseStream(master_seed, r); results are
// stored per run and folded in index order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pam/ensemble.hpp"
#include "pam/error.hpp"
#include "pam/kpz.hpp"
#include "pam/noise.hpp"
#include "pam/she/solver.hpp"
#include "pam/stats.hpp"

namespace pam {

struct EnsembleSpec {
    GridSpec grid;
    InitialData init = FlatInit{1.0};
    std::uint64_t master_seed = 0;
    std::uint64_t runs = 0;
    unsigned workers = 1;
    bool zero_noise = false;  // heat equation only; for degenerate checks

    void validate() const {
        if (runs == 0) throw ValidationError("N: ensemble size N > 0 required");
        if (workers == 0) throw ValidationError("workers: at least one worker required");
        grid.validate().raise_if_errors();
        pam::validate(init, grid).raise_if_errors();
    }
};

/// Solves run r of the ensemble on `grid` (whose snapshot times say what to
/// keep) and returns f(r, snapshots), or nullopt when the run diverged.
template <class F>
auto map_runs(const EnsembleSpec& ens, const GridSpec& grid, F&& f) {
    using R = std::invoke_result_t<F&, std::uint64_t, const std::vector<LatticeField>&>;
    grid.validate().raise_if_errors();
    validate(ens.init, grid).raise_if_errors();
    const Lattice lat = grid.lattice();
    return parallel_map(ens.runs, ens.workers, [&](std::uint64_t r) -> std::optional<R> {
        std::vector<LatticeField> snaps;
        snaps.reserve(grid.snapshot_times.size());
        auto keep = [&](double t, std::span<const double> u) {
            snaps.push_back({t, std::vector<double>(u.begin(), u.end()), lat});
        };
        const RunStatus st = ens.zero_noise ? solve_visit(grid, ens.init, ZeroNoise{}, keep)
                                            : solve_visit(grid, ens.init, NoiseStream(ens.master_seed, r), keep);
        if (st != RunStatus::ok) return std::nullopt;
        return f(r, snaps);
    });
}

namespace detail {
inline GridSpec with_snapshots(GridSpec g, std::vector<double> times) {
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end(), [&](double a, double b) { return g.step_of(a) == g.step_of(b); }),
                times.end());
    g.snapshot_times = std::move(times);
    if (!g.snapshot_times.empty()) g.t_end = std::max(g.t_end, g.snapshot_times.back());
    g.t_end = static_cast<double>(g.step_of(g.t_end)) * g.dt;
    return g;
}

inline void require_dirac(const EnsembleSpec& ens, std::string_view what) {
    if (!std::holds_alternative<DiracInit>(ens.init))
        throw ValidationError("init: " + std::string(what) + " is defined for dirac (narrow-wedge) initial data");
}

/// Rescaled positions x~ with physical position t^{2/3} x~ inside the domain.
inline void require_rescaled_window(const GridSpec& g, double t, double lo, double hi, std::string_view what) {
    const double scale = std::cbrt(t) * std::cbrt(t);
    const double tol = 1e-9 * g.dx;
    const double last = g.x_min + (static_cast<double>(g.site_count()) - 1.0) * g.dx;
    if (scale * lo < g.x_min - tol || scale * hi > last + tol)
        throw ValidationError(std::string(what) + ": event parameters outside simulated window [" +
                              std::to_string(g.x_min / scale) + ", " + std::to_string(last / scale) +
                              "] (rescaled)");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Events

enum class EventKind {
    one_point_lower,
    one_point_upper,
    upsilon_lower,
    upsilon_upper,
    sup_parabola_upper,
    sup_parabola_lower,
    argsup_outside,
    modulus_exceed,
    box_inf
};

inline constexpr std::pair<EventKind, std::string_view> kEventNames[] = {
    {EventKind::one_point_lower, "one_point_lower"},       {EventKind::one_point_upper, "one_point_upper"},
    {EventKind::upsilon_lower, "upsilon_lower"},           {EventKind::upsilon_upper, "upsilon_upper"},
    {EventKind::sup_parabola_upper, "sup_parabola_upper"}, {EventKind::sup_parabola_lower, "sup_parabola_lower"},
    {EventKind::argsup_outside, "argsup_outside"},         {EventKind::modulus_exceed, "modulus_exceed"},
    {EventKind::box_inf, "box_inf"}};

inline std::string_view to_string(EventKind k) {
    for (const auto& [kind, name] : kEventNames)
        if (kind == k) return name;
    return "?";
}

inline EventKind parse_event_kind(std::string_view s) {
    for (const auto& [kind, name] : kEventNames)
        if (name == s) return kind;
    throw ValidationError("event.kind: unknown event '" + std::string(s) + "'");
}

/// One event of a family. Positions x, a, M, window are rescaled (x~) for the
/// upsilon-based kinds and physical for one_point and box_inf.
struct EventSpec {
    EventKind kind = EventKind::one_point_lower;
    double gamma = 1.0 / 12;
    double s = 0.0;
    double t = 1.0;
    double x = 0.0;
    double nu = 0.5;
    double M = 1.0;
    double window = 4.0;  // half-width of the search window for argsup
    double a = 0.0;       // modulus start point, or box time start
    double b = 0.0;       // box space start
    double eps = 0.25;
    double l1 = 0.0;
    double l2 = 0.0;

    double& field(std::string_view name) {
        if (name == "gamma") return gamma;
        if (name == "s") return s;
        if (name == "t") return t;
        if (name == "x") return x;
        if (name == "nu") return nu;
        if (name == "M") return M;
        if (name == "window") return window;
        if (name == "a") return a;
        if (name == "b") return b;
        if (name == "eps") return eps;
        if (name == "l1") return l1;
        if (name == "l2") return l2;
        throw ValidationError("sweep: unknown event parameter '" + std::string(name) + "'");
    }

    EventSpec with(std::string_view name, double v) const {
        EventSpec e = *this;
        e.field(name) = v;
        return e;
    }

    /// Times at which the event reads the field.
    std::vector<double> times(const GridSpec& g) const {
        if (kind != EventKind::box_inf) return {t};
        std::vector<double> out;
        const std::uint64_t k0 = static_cast<std::uint64_t>(std::ceil(a / g.dt - 1e-9));
        const std::uint64_t k1 = static_cast<std::uint64_t>(std::floor((a + l1) / g.dt + 1e-9));
        for (std::uint64_t k = k0; k <= k1; ++k) out.push_back(static_cast<double>(k) * g.dt);
        return out;
    }

    void validate(const EnsembleSpec& ens) const {
        const GridSpec& g = ens.grid;
        if (!(t > 0.0)) throw ValidationError("event.t: t > 0 required");
        switch (kind) {
            case EventKind::one_point_lower:
            case EventKind::one_point_upper:
                if (!(gamma > 0.0)) throw ValidationError("event.gamma: gamma > 0 required");
                if (x < g.x_min || x >= g.x_max) throw ValidationError("event.x: outside simulated window");
                break;
            case EventKind::upsilon_lower:
            case EventKind::upsilon_upper:
                detail::require_dirac(ens, "upsilon");
                detail::require_rescaled_window(g, t, x, x, "event.x");
                break;
            case EventKind::sup_parabola_upper:
            case EventKind::sup_parabola_lower:
                detail::require_dirac(ens, "sup_parabola");
                if (!(nu > 0.0 && nu < 1.0)) throw ValidationError("event.nu: nu in (0, 1) required");
                if (!(M > 0.0)) throw ValidationError("event.M: M > 0 required");
                detail::require_rescaled_window(g, t, -M, M, "event.M");
                break;
            case EventKind::argsup_outside:
                detail::require_dirac(ens, "argsup");
                if (!(nu > 0.0 && nu < 1.0)) throw ValidationError("event.nu: nu in (0, 1) required");
                if (!(M >= 0.0) || M > window) throw ValidationError("event.M: 0 <= M <= window required");
                detail::require_rescaled_window(g, t, -window, window, "event.window");
                break;
            case EventKind::modulus_exceed: {
                detail::require_dirac(ens, "modulus");
                if (!(eps > 0.0) || !(s > 0.0)) throw ValidationError("event.eps/s: eps > 0 and s > 0 required");
                const double len = eps * std::sqrt(s) / 16.0;
                detail::require_rescaled_window(g, t, a, a + len, "event.a");
                const double dx_rescaled = g.dx / (std::cbrt(t) * std::cbrt(t));
                if (len < dx_rescaled * (1.0 - 1e-9))
                    throw ValidationError("event.eps: interval [a, a + eps sqrt(s)/16] holds fewer than 2 grid points");
                break;
            }
            case EventKind::box_inf:
                if (!(gamma > 1.0 / 24)) throw ValidationError("event.gamma: gamma > 1/24 required for box events");
                if (!(a > 0.0) || !(l1 >= 0.0) || !(l2 >= 0.0))
                    throw ValidationError("event.a/l1/l2: a > 0, l1 >= 0, l2 >= 0 required");
                if (a + l1 > g.t_end * (1 + 1e-12) || b < g.x_min || b + l2 >= g.x_max)
                    throw ValidationError("event: box outside simulated region");
                break;
        }
    }
};

namespace detail {

/// Per-run, per-time cache of Upsilon on lattice sites.
class RunView {
public:
    explicit RunView(const std::vector<LatticeField>& snaps) : snaps_(snaps) {}

    const LatticeField& at(double t, double dt) const {
        for (const auto& f : snaps_)
            if (std::fabs(f.t - t) < 0.5 * dt) return f;
        throw ValidationError("event.t: no snapshot at t = " + std::to_string(t));
    }
    const UpsilonField& upsilon(double t, double dt) {
        for (auto& [tt, u] : ups_)
            if (std::fabs(tt - t) < 0.5 * dt) return u;
        ups_.emplace_back(t, upsilon_on_sites(cole_hopf(at(t, dt))));
        return ups_.back().second;
    }

private:
    const std::vector<LatticeField>& snaps_;
    std::vector<std::pair<double, UpsilonField>> ups_;
};

inline double upsilon_at(const UpsilonField& u, double x) {
    // Linear interpolation on the (uniform) rescaled site grid.
    const double h = u.x[1] - u.x[0];
    const double s = (x - u.x.front()) / h;
    auto i = static_cast<std::size_t>(std::clamp(std::floor(s), 0.0, static_cast<double>(u.x.size() - 2)));
    const double w = s - static_cast<double>(i);
    return w == 0.0 ? u.values[i] : (1.0 - w) * u.values[i] + w * u.values[i + 1];
}

inline bool event_hit(const EventSpec& e, RunView& view, double dt) {
    switch (e.kind) {
        case EventKind::one_point_lower:
        case EventKind::one_point_upper: {
            const auto& f = view.at(e.t, dt);
            const double u = f.values[f.lattice.nearest(e.x)];
            const bool low = u <= std::exp(-e.gamma * e.t);
            return e.kind == EventKind::one_point_lower ? low : !low;
        }
        case EventKind::upsilon_lower:
        case EventKind::upsilon_upper: {
            const double y = upsilon_at(view.upsilon(e.t, dt), e.x) + 0.5 * e.x * e.x;
            return e.kind == EventKind::upsilon_upper ? y >= e.s : y <= -e.s;
        }
        case EventKind::sup_parabola_upper:
        case EventKind::sup_parabola_lower: {
            const auto r = sup_parabola(view.upsilon(e.t, dt), e.nu, -e.M, e.M);
            return e.kind == EventKind::sup_parabola_upper ? r.value >= e.s : r.value <= -e.s;
        }
        case EventKind::argsup_outside: {
            const auto r = sup_parabola(view.upsilon(e.t, dt), e.nu, -e.window, e.window);
            return std::fabs(r.argsup) > e.M;
        }
        case EventKind::modulus_exceed: {
            const double len = e.eps * std::sqrt(e.s) / 16.0;
            return modulus_deviation(view.upsilon(e.t, dt), e.a, len) >= std::sqrt(e.eps) * e.s;
        }
        case EventKind::box_inf:
            break;
    }
    throw ValidationError("event_hit: box events are evaluated over all box times");
}

/// Some node (t, x) in [a, a + l1] x [b, b + l2] with u < e^{-gamma t}.
inline bool box_hit(const EventSpec& e, const std::vector<LatticeField>& snaps, double dt) {
    const double tol = 1e-9 * dt;
    for (const auto& f : snaps) {
        if (f.t < e.a - tol || f.t > e.a + e.l1 + tol) continue;
        const double thr = std::exp(-e.gamma * f.t);
        const auto i0 = static_cast<std::size_t>(std::ceil((e.b - f.lattice.x_min) / f.lattice.dx - 1e-9));
        const auto i1 = static_cast<std::size_t>(std::floor((e.b + e.l2 - f.lattice.x_min) / f.lattice.dx + 1e-9));
        for (std::size_t i = i0; i <= i1 && i < f.values.size(); ++i)
            if (f.values[i] < thr) return true;
    }
    return false;
}

}  // namespace detail

struct TailRow {
    double param;
    std::uint64_t hits;
    std::uint64_t n;
    double p;
    double ci_lo;
    double ci_hi;
};

struct TailCurve {
    std::string event;
    std::string param;
    std::vector<TailRow> rows;
    std::uint64_t censored = 0;  // diverged runs, excluded from n
    std::uint64_t master_seed = 0;
    std::vector<std::string> notes;
};

inline TailRow make_row(double param, std::uint64_t hits, std::uint64_t n) {
    const auto ci = stats::wilson(hits, n);
    return {param, hits, n, static_cast<double>(hits) / static_cast<double>(n), ci.lo, ci.hi};
}

/// Frequency estimates of the event with `param` set to each sweep value.
inline TailCurve estimate_tail(const EnsembleSpec& ens, const EventSpec& event, const std::string& param,
                               const std::vector<double>& values) {
    ens.validate();
    if (ens.runs < 100) throw ValidationError("N: ensemble size N >= 100 required for tail estimates");
    if (values.empty()) throw ValidationError("sweep: empty value list");
    std::vector<EventSpec> specs;
    std::vector<double> times;
    for (double v : values) {
        specs.push_back(event.with(param, v));
        specs.back().validate(ens);
        const auto ts = specs.back().times(ens.grid);
        times.insert(times.end(), ts.begin(), ts.end());
    }
    for (double t : times)
        if (t > ens.grid.t_end * (1 + 1e-12)) throw ValidationError("event.t: beyond the simulated t_end");
    const GridSpec g = detail::with_snapshots(ens.grid, times);
    const double dt = g.dt;
    const auto per_run = map_runs(ens, g, [&](std::uint64_t, const std::vector<LatticeField>& snaps) {
        detail::RunView view(snaps);
        std::vector<std::uint8_t> hit(specs.size());
        for (std::size_t k = 0; k < specs.size(); ++k)
            hit[k] = specs[k].kind == EventKind::box_inf ? detail::box_hit(specs[k], snaps, dt)
                                                          : detail::event_hit(specs[k], view, dt);
        return hit;
    });
    TailCurve c;
    c.event = std::string(to_string(event.kind));
    c.param = param;
    c.master_seed = ens.master_seed;
    std::vector<std::uint64_t> hits(specs.size(), 0);
    std::uint64_t n = 0;
    for (const auto& r : per_run) {
        if (!r) {
            ++c.censored;
            continue;
        }
        ++n;
        for (std::size_t k = 0; k < specs.size(); ++k) hits[k] += (*r)[k];
    }
    if (n == 0) throw Error("estimate_tail: every run diverged");
    for (std::size_t k = 0; k < specs.size(); ++k) c.rows.push_back(make_row(values[k], hits[k], n));
    if (c.censored > 0) c.notes.push_back(std::to_string(c.censored) + " diverged runs censored");
    return c;
}

// ---------------------------------------------------------------------------
// Exponent fits

struct ExponentFit {
    double alpha = 0.0;
    double c = 0.0;
    double alpha_se = 0.0;
    double c_se = 0.0;
    double r2 = 0.0;
    double s_lo = 0.0, s_hi = 0.0;
    std::size_t rows_used = 0;
};

inline constexpr std::uint64_t kMinHitsForFit = 10;

/// Least squares of log(-log p) on log s over rows with at least 10 hits and
/// 0 < p < 1: p(s) ~ exp(-c s^alpha).
inline ExponentFit fit_exponent(const TailCurve& curve) {
    std::vector<double> x, y;
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& r : curve.rows) {
        if (r.hits < kMinHitsForFit || !(r.p > 0.0 && r.p < 1.0) || !(r.param > 0.0)) continue;
        x.push_back(std::log(r.param));
        y.push_back(std::log(-std::log(r.p)));
        lo = std::min(lo, r.param);
        hi = std::max(hi, r.param);
    }
    if (x.size() < 4)
        throw ValidationError("fit_exponent: " + std::to_string(x.size()) +
                              " usable rows (>= 10 hits, 0 < p < 1); at least 4 required");
    const auto f = stats::ols(x, y);
    ExponentFit e;
    e.alpha = f.slope;
    e.alpha_se = f.slope_se;
    e.c = std::exp(f.intercept);
    e.c_se = e.c * f.intercept_se;
    e.r2 = f.r2;
    e.s_lo = lo;
    e.s_hi = hi;
    e.rows_used = x.size();
    return e;
}

// ---------------------------------------------------------------------------
// Moment growth

struct MomentPoint {
    double t;
    double mean;      // E-hat[u^k], spatially averaged per run
    double se;
    double log_mean;
    bool kept;
    double site_ratio;  // mean(u(t,0)^{2k}) / mean(u(t,0)^k)^2 from the single site
    double n_eff;       // N / site_ratio
};

struct MomentReport {
    int k = 0;
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;  // bootstrap percentile interval
    std::uint64_t runs = 0;
    std::uint64_t censored = 0;
    std::vector<MomentPoint> points;
    std::vector<std::string> warnings;
};

struct MomentOptions {
    std::size_t bootstrap = 1000;
    double max_rel_se = 0.5;
    bool allow_high_k = false;
};

/// log E[u(t,0)^k] against t for flat data u0 = 1. Each run contributes the
/// spatial mean of u(t, .)^k (the law is translation invariant on the
/// periodic domain). Times whose relative standard error exceeds 50% are
/// dropped with a warning.
inline std::vector<MomentReport> moment_lyapunov(const std::vector<int>& ks, const std::vector<double>& t_grid,
                                                 const EnsembleSpec& ens, const MomentOptions& opt = {}) {
    ens.validate();
    const auto* flat = std::get_if<FlatInit>(&ens.init);
    if (flat == nullptr || flat->c != 1.0) throw ValidationError("init: moment growth needs flat data u0 = 1");
    if (ens.grid.boundary != Boundary::periodic) throw ValidationError("boundary: moment growth needs a periodic domain");
    if (ks.empty() || t_grid.size() < 2) throw ValidationError("moments: need k values and at least two times");
    for (int k : ks) {
        if (k < 1) throw ValidationError("k: positive integer required");
        if (k > 3 && !opt.allow_high_k)
            throw ValidationError("k: k <= 3 (variance of E-hat[u^k] grows like e^{Theta(t)} beyond)");
    }
    const GridSpec g = detail::with_snapshots(ens.grid, t_grid);
    const std::size_t T = g.snapshot_times.size(), K = ks.size();
    const std::size_t centre = g.lattice().nearest(0.0);
    // Per run: [t][k] spatial mean of u^k, then [t][k] u(t,0)^k.
    const auto per_run = map_runs(ens, g, [&](std::uint64_t, const std::vector<LatticeField>& snaps) {
        std::vector<double> rec(2 * T * K);
        for (std::size_t i = 0; i < T; ++i) {
            const auto& v = snaps[i].values;
            for (std::size_t q = 0; q < K; ++q) {
                double s = 0.0;
                for (double u : v) s += std::pow(u, ks[q]);
                rec[i * K + q] = s / static_cast<double>(v.size());
                rec[T * K + i * K + q] = std::pow(v[centre], ks[q]);
            }
        }
        return rec;
    });
    std::vector<const std::vector<double>*> ok;
    std::uint64_t censored = 0;
    for (const auto& r : per_run) {
        if (r)
            ok.push_back(&*r);
        else
            ++censored;
    }
    if (ok.size() < 2) throw Error("moments: fewer than two runs finished");
    const auto N = static_cast<double>(ok.size());
    std::vector<MomentReport> out;
    for (std::size_t q = 0; q < K; ++q) {
        MomentReport rep;
        rep.k = ks[q];
        rep.runs = ok.size();
        rep.censored = censored;
        std::vector<double> xs, ys;
        std::vector<std::size_t> kept_idx;
        for (std::size_t i = 0; i < T; ++i) {
            std::vector<double> col(ok.size());
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t r = 0; r < ok.size(); ++r) {
                col[r] = (*ok[r])[i * K + q];
                const double site = (*ok[r])[T * K + i * K + q];
                m1 += site;
                m2 += site * site;
            }
            const auto ms = stats::mean_se(col);
            MomentPoint p{};
            p.t = g.snapshot_times[i];
            p.mean = ms.mean;
            p.se = ms.se;
            p.log_mean = std::log(ms.mean);
            m1 /= N;
            m2 /= N;
            p.site_ratio = m2 / (m1 * m1);
            p.n_eff = N / p.site_ratio;
            p.kept = ms.mean > 0.0 && ms.se <= opt.max_rel_se * ms.mean;
            if (!p.kept) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "k=%d: t=%g dropped, relative stderr %.3g > %.3g", rep.k, p.t,
                              ms.se / ms.mean, opt.max_rel_se);
                rep.warnings.emplace_back(buf);
            } else {
                xs.push_back(p.t);
                ys.push_back(p.log_mean);
                kept_idx.push_back(i);
            }
            rep.points.push_back(p);
        }
        if (xs.size() < 2) {
            rep.warnings.emplace_back("fewer than two times kept; slope undefined");
            rep.slope = rep.ci_lo = rep.ci_hi = std::numeric_limits<double>::quiet_NaN();
            out.push_back(std::move(rep));
            continue;
        }
        const auto fit = stats::ols(xs, ys);
        rep.slope = fit.slope;
        rep.intercept = fit.intercept;
        rep.slope_se = fit.slope_se;
        // Bootstrap over runs.
        std::mt19937_64 rng(hash_combine(ens.master_seed, 0xB0075u + static_cast<std::uint64_t>(rep.k)));
        std::uniform_int_distribution<std::size_t> pick(0, ok.size() - 1);
        std::vector<double> slopes;
        std::vector<std::size_t> idx(ok.size());
        std::vector<double> yb(kept_idx.size());
        for (std::size_t b = 0; b < opt.bootstrap; ++b) {
            for (auto& v : idx) v = pick(rng);
            for (std::size_t j = 0; j < kept_idx.size(); ++j) {
                double s = 0.0;
                for (std::size_t r : idx) s += (*ok[r])[kept_idx[j] * K + q];
                yb[j] = std::log(s / N);
            }
            slopes.push_back(stats::ols(xs, yb).slope);
        }
        if (!slopes.empty()) {
            rep.ci_lo = stats::quantile(slopes, 0.025);
            rep.ci_hi = stats::quantile(slopes, 0.975);
        }
        out.push_back(std::move(rep));
    }
    return out;
}

inline MomentReport moment_lyapunov(int k, const std::vector<double>& t_grid, const EnsembleSpec& ens,
                                    const MomentOptions& opt = {}) {
    return moment_lyapunov(std::vector<int>{k}, t_grid, ens, opt).front();
}

// ---------------------------------------------------------------------------
// Convolution identity

struct ConvolutionReport {
    stats::KsResult ks{};
    std::vector<double> direct;    // log u(t, x) from the initial data
    std::vector<double> integral;  // log of the quadrature over narrow-wedge runs
    double tail_mass_bound = 0.0;  // heat-kernel mass beyond the domain half-width
    double edge_fraction = 0.0;    // mean share of the integral from the outer tenth of the domain
    std::uint64_t censored = 0;
};

/// Two independent samples: log u(t, x) from `init`, and
/// log sum_y u0(x - y) u_nw(t, y) dy over independent dirac runs.
inline ConvolutionReport convolution_test(const EnsembleSpec& ens, double t, double x = 0.0) {
    ens.validate();
    if (!(t >= 0.5)) throw ValidationError("t: t >= 0.5 required");
    const GridSpec g = detail::with_snapshots(ens.grid, {t});
    const Lattice lat = g.lattice();
    std::vector<double> u0 = materialize(ens.init, lat);
    if (std::holds_alternative<DiracInit>(ens.init)) throw ValidationError("init: bounded positive data required");
    for (double v : u0)
        if (!(v > 0.0) || !std::isfinite(v)) throw ValidationError("init: bounded positive data required");
    const double half = std::min(x - g.x_min, g.x_max - x);
    ConvolutionReport rep;
    rep.tail_mass_bound = std::erfc(half / std::sqrt(2.0 * t));
    if (rep.tail_mass_bound > 0.01)
        throw ValidationError("domain: heat-kernel mass beyond the half-width is " +
                              std::to_string(rep.tail_mass_bound) + " > 1%; enlarge the domain");
    const std::size_t site = lat.nearest(x);
    EnsembleSpec direct = ens;
    direct.master_seed = hash_combine(ens.master_seed, 1);
    const auto a = map_runs(direct, g, [&](std::uint64_t, const std::vector<LatticeField>& s) {
        return std::log(s.back().values[site]);
    });
    EnsembleSpec wedge = ens;
    wedge.master_seed = hash_combine(ens.master_seed, 2);
    wedge.init = DiracInit{0.0};
    const std::size_t n = lat.size;
    // u0(x - y_i): the site of x - y_i, wrapped on periodic domains.
    std::vector<double> weight(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double xr = x - lat.x(i);
        long j = std::lround((xr - lat.x_min) / lat.dx);
        if (lat.boundary == Boundary::periodic) {
            j %= static_cast<long>(n);
            if (j < 0) j += static_cast<long>(n);
        }
        if (j >= 0 && j < static_cast<long>(n)) weight[i] = u0[static_cast<std::size_t>(j)] * lat.dx;
    }
    if (lat.boundary == Boundary::absorbing) {
        weight.front() *= 0.5;
        weight.back() *= 0.5;
    }
    const double edge = 0.9 * std::min(-g.x_min, g.x_max);
    const auto b = map_runs(wedge, g, [&](std::uint64_t, const std::vector<LatticeField>& s) {
        const auto& v = s.back().values;
        double total = 0.0, outer = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double c = weight[i] * v[i];
            total += c;
            if (std::fabs(lat.x(i)) > edge) outer += c;
        }
        return std::pair<double, double>{std::log(total), outer / total};
    });
    for (const auto& r : a) {
        if (r)
            rep.direct.push_back(*r);
        else
            ++rep.censored;
    }
    double edge_sum = 0.0;
    for (const auto& r : b) {
        if (r) {
            rep.integral.push_back(r->first);
            edge_sum += r->second;
        } else {
            ++rep.censored;
        }
    }
    if (rep.direct.empty() || rep.integral.empty()) throw Error("convolution_test: every run diverged");
    rep.edge_fraction = edge_sum / static_cast<double>(rep.integral.size());
    rep.ks = stats::ks_two_sample(rep.direct, rep.integral);
    return rep;
}

// ---------------------------------------------------------------------------
// FKG

struct FkgSpec {
    double t = 1.0;
    double a = -1.0, b = 0.0;  // first interval (rescaled)
    double c = 0.5, d = 1.5;   // second interval (rescaled)
    std::optional<double> s;   // threshold; tuned from a pilot when absent
    double nu = 0.5;
    std::uint64_t pilot_runs = 2000;
};

struct FkgReport {
    double s = 0.0;
    double p1 = 0.0, p2 = 0.0, p12 = 0.0;
    double diff = 0.0;  // p12 - p1 p2
    double se = 0.0;
    double z = 0.0;
    bool inconclusive = false;
    bool holds = false;  // diff >= -3 se
    std::uint64_t runs = 0, censored = 0;
};

namespace detail {
inline std::pair<double, double> interval_sups(const UpsilonField& u, const FkgSpec& f) {
    return {sup_parabola(u, f.nu, f.a, f.b).value, sup_parabola(u, f.nu, f.c, f.d).value};
}
}  // namespace detail

/// Joint against product for {sup_I1 (Upsilon + nu x^2/2) <= s} and the same
/// on I2. The standard error of p12 - p1 p2 is from the delta method.
inline FkgReport fkg_test(const EnsembleSpec& ens, const FkgSpec& f) {
    ens.validate();
    detail::require_dirac(ens, "fkg_test");
    if (!(f.nu > 0.0 && f.nu < 1.0)) throw ValidationError("nu: nu in (0, 1) required");
    if (!(f.a < f.b) || !(f.c < f.d)) throw ValidationError("intervals: need a < b and c < d");
    if (!(f.b < f.c || f.d < f.a)) throw ValidationError("intervals: [a, b] and [c, d] must be disjoint");
    detail::require_rescaled_window(ens.grid, f.t, std::min(f.a, f.c), std::max(f.b, f.d), "intervals");
    const GridSpec g = detail::with_snapshots(ens.grid, {f.t});
    auto sups = [&](const EnsembleSpec& e) {
        return map_runs(e, g, [&](std::uint64_t, const std::vector<LatticeField>& s) {
            return detail::interval_sups(upsilon_on_sites(cole_hopf(s.back())), f);
        });
    };
    FkgReport rep;
    if (f.s) {
        rep.s = *f.s;
    } else {
        EnsembleSpec pilot = ens;
        pilot.master_seed = hash_combine(ens.master_seed, 0x9110u);
        pilot.runs = f.pilot_runs;
        std::vector<double> pooled;
        for (const auto& r : sups(pilot))
            if (r) pooled.insert(pooled.end(), {r->first, r->second});
        if (pooled.empty()) throw Error("fkg_test: pilot runs all diverged");
        rep.s = stats::quantile(pooled, 0.5);
    }
    const auto res = sups(ens);
    std::vector<std::pair<int, int>> ind;
    for (const auto& r : res) {
        if (!r) {
            ++rep.censored;
            continue;
        }
        ind.emplace_back(r->first <= rep.s, r->second <= rep.s);
    }
    if (ind.empty()) throw Error("fkg_test: every run diverged");
    const auto N = static_cast<double>(ind.size());
    rep.runs = ind.size();
    for (const auto& [x, y] : ind) {
        rep.p1 += x;
        rep.p2 += y;
        rep.p12 += x * y;
    }
    rep.p1 /= N;
    rep.p2 /= N;
    rep.p12 /= N;
    rep.diff = rep.p12 - rep.p1 * rep.p2;
    // Influence function of mean(xy) - mean(x) mean(y).
    double m = 0.0, ss = 0.0;
    for (const auto& [x, y] : ind) m += x * y - rep.p2 * x - rep.p1 * y;
    m /= N;
    for (const auto& [x, y] : ind) {
        const double z = x * y - rep.p2 * x - rep.p1 * y - m;
        ss += z * z;
    }
    rep.se = std::sqrt(ss / (N - 1.0) / N);
    rep.inconclusive = rep.p1 == 0.0 || rep.p1 == 1.0 || rep.p2 == 0.0 || rep.p2 == 1.0;
    rep.z = rep.se > 0.0 ? rep.diff / rep.se : 0.0;
    rep.holds = rep.diff >= -3.0 * rep.se;
    return rep;
}

// ---------------------------------------------------------------------------
// Argsup localization, modulus and box-infimum tails

struct LocalizationReport {
    TailCurve curve;
    std::vector<double> smoothed;  // isotonic (nonincreasing in M)
    double max_violation = 0.0;    // largest increase of p-hat along the sweep
    double max_violation_se = 0.0; // that increase in units of its row's stderr
    std::optional<double> decay_exponent;  // -slope of log p-hat on log M (rows with >= 10 hits)
};

inline LocalizationReport argsup_localization(const EnsembleSpec& ens, double t, double nu,
                                              std::vector<double> M_sweep, double window) {
    if (M_sweep.empty()) throw ValidationError("M_sweep: empty value list");
    std::sort(M_sweep.begin(), M_sweep.end());
    if (window < 4.0 * M_sweep.back() * (1 - 1e-12))
        throw ValidationError("window: window >= 4 max(M) required");
    EventSpec e;
    e.kind = EventKind::argsup_outside;
    e.t = t;
    e.nu = nu;
    e.window = window;
    LocalizationReport rep{estimate_tail(ens, e, "M", M_sweep), {}, 0.0, 0.0, std::nullopt};
    std::vector<double> p;
    for (const auto& r : rep.curve.rows) p.push_back(r.p);
    rep.smoothed = stats::isotonic_nonincreasing(p);
    for (std::size_t k = 1; k < p.size(); ++k) {
        const double inc = p[k] - p[k - 1];
        if (inc > rep.max_violation) {
            rep.max_violation = inc;
            const double se = std::sqrt(std::max(p[k] * (1 - p[k]), 1e-300) / static_cast<double>(rep.curve.rows[k].n));
            rep.max_violation_se = inc / se;
        }
    }
    std::vector<double> x, y;
    for (const auto& r : rep.curve.rows)
        if (r.hits >= kMinHitsForFit && r.param > 0.0) {
            x.push_back(std::log(r.param));
            y.push_back(std::log(r.p));
        }
    if (x.size() >= 2) rep.decay_exponent = -stats::ols(x, y).slope;
    return rep;
}

struct ModulusReport {
    TailCurve curve;
    std::optional<ExponentFit> fit;
    std::string fit_note;
};

inline ModulusReport modulus_tail(const EnsembleSpec& ens, double t, double a, double eps,
                                  const std::vector<double>& s_sweep) {
    EventSpec e;
    e.kind = EventKind::modulus_exceed;
    e.t = t;
    e.a = a;
    e.eps = eps;
    ModulusReport rep{estimate_tail(ens, e, "s", s_sweep), std::nullopt, {}};
    try {
        rep.fit = fit_exponent(rep.curve);
    } catch (const ValidationError& err) {
        rep.fit_note = err.what();
    }
    return rep;
}

inline TailCurve box_inf_tail(const EnsembleSpec& ens, const std::vector<double>& a_sweep, double l1, double l2,
                              double gamma, double b = 0.0) {
    EventSpec e;
    e.kind = EventKind::box_inf;
    e.l1 = l1;
    e.l2 = l2;
    e.gamma = gamma;
    e.b = b;
    return estimate_tail(ens, e, "a", a_sweep);
}

// ---------------------------------------------------------------------------
// Serialisation

inline void write_tail_csv(std::ostream& os, const TailCurve& c) {
    os << c.param << ",hits,n,p_hat,ci_lo,ci_hi\n";
    char buf[192];
    for (const auto& r : c.rows) {
        std::snprintf(buf, sizeof buf, "%.17g,%llu,%llu,%.17g,%.17g,%.17g\n", r.param,
                      static_cast<unsigned long long>(r.hits), static_cast<unsigned long long>(r.n), r.p, r.ci_lo,
                      r.ci_hi);
        os << buf;
    }
}

inline nlohmann::json to_json(const TailCurve& c) {
    nlohmann::json j;
    j["event"] = c.event;
    j["param"] = c.param;
    j["master_seed"] = c.master_seed;
    j["censored"] = c.censored;
    j["notes"] = c.notes;
    for (const auto& r : c.rows)
        j["rows"].push_back({{"param", r.param}, {"hits", r.hits}, {"n", r.n}, {"p_hat", r.p}, {"ci", {r.ci_lo, r.ci_hi}}});
    return j;
}

inline nlohmann::json to_json(const ExponentFit& f) {
    return {{"alpha", f.alpha}, {"c", f.c},     {"alpha_se", f.alpha_se},           {"c_se", f.c_se},
            {"r2", f.r2},       {"s_range", {f.s_lo, f.s_hi}}, {"rows_used", f.rows_used}};
}

inline nlohmann::json to_json(const MomentReport& m) {
    nlohmann::json j{{"k", m.k},
                     {"slope", m.slope},
                     {"intercept", m.intercept},
                     {"slope_se", m.slope_se},
                     {"bootstrap_ci", {m.ci_lo, m.ci_hi}},
                     {"runs", m.runs},
                     {"censored", m.censored},
                     {"warnings", m.warnings}};
    for (const auto& p : m.points)
        j["points"].push_back({{"t", p.t},
                               {"mean", p.mean},
                               {"se", p.se},
                               {"log_mean", p.log_mean},
                               {"kept", p.kept},
                               {"single_site_moment_ratio", p.site_ratio},
                               {"effective_samples", p.n_eff}});
    return j;
}

inline nlohmann::json to_json(const ConvolutionReport& r) {
    return {{"ks_statistic", r.ks.statistic}, {"p_value", r.ks.p_value},   {"n_direct", r.ks.n1},
            {"n_integral", r.ks.n2},         {"tail_mass_bound", r.tail_mass_bound},
            {"edge_fraction", r.edge_fraction}, {"censored", r.censored}};
}

inline nlohmann::json to_json(const FkgReport& r) {
    return {{"s", r.s},   {"p1", r.p1},   {"p2", r.p2},       {"p12", r.p12},
            {"diff", r.diff}, {"stderr", r.se}, {"z", r.z}, {"inconclusive", r.inconclusive},
            {"holds", r.holds}, {"runs", r.runs}, {"censored", r.censored}};
}

}  // namespace pam
