#pragma once

// Macroscopic (Barlow-Taylor) Hausdorff content on exponential shells
//   V_n = [0, e^n) x [-e^n, e^n),   S_n = V_n \ V_{n-1},
// covers by half-open integer boxes of side >= 1, and a dimension read-off.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "pam/error.hpp"
#include "pam/ensemble.hpp"
#include "pam/level_sets.hpp"
#include "pam/stats.hpp"

namespace pam {

enum class CoverStrategy { exact_small, single_scale, greedy_multiscale };

inline std::string_view to_string(CoverStrategy s) {
    switch (s) {
        case CoverStrategy::exact_small: return "exact_small";
        case CoverStrategy::single_scale: return "single_scale";
        case CoverStrategy::greedy_multiscale: return "greedy_multiscale";
    }
    return "?";
}

inline CoverStrategy parse_strategy(std::string_view s) {
    if (s == "exact_small") return CoverStrategy::exact_small;
    if (s == "single_scale") return CoverStrategy::single_scale;
    if (s == "greedy_multiscale" || s == "greedy") return CoverStrategy::greedy_multiscale;
    throw ValidationError("strategy: expected exact_small, single_scale or greedy_multiscale, got '" +
                          std::string(s) + "'");
}

struct Shell {
    int n;

    /// Integer coordinate bounds of V_m: s in [0, s_top], j in [j_bottom, j_top].
    static std::int64_t below_exp(int m) {
        return m == 0 ? 0 : static_cast<std::int64_t>(std::floor(std::exp(static_cast<double>(m))));
    }
    static std::int64_t neg_exp(int m) { return -static_cast<std::int64_t>(std::floor(std::exp(static_cast<double>(m)))); }

    bool contains(double t, double x) const noexcept {
        const double hi = std::exp(static_cast<double>(n)), lo = std::exp(static_cast<double>(n - 1));
        const bool in_outer = t >= 0.0 && t < hi && x >= -hi && x < hi;
        const bool in_inner = t >= 0.0 && t < lo && x >= -lo && x < lo;
        return in_outer && !in_inner;
    }
    bool contains(const Pixel& p) const noexcept {
        const bool in_outer = p.s >= 0 && p.s <= below_exp(n) && p.j >= neg_exp(n) && p.j <= below_exp(n);
        const bool in_inner = p.s >= 0 && p.s <= below_exp(n - 1) && p.j >= neg_exp(n - 1) && p.j <= below_exp(n - 1);
        return in_outer && !in_inner;
    }
};

/// E ∩ S_n, keeping the set's kind.
inline SpaceTimeSet shell_clip(const SpaceTimeSet& set, int n) {
    if (n < 1) throw ValidationError("shell: n >= 1 required");
    const Shell sh{n};
    if (!set.is_pixel()) {
        std::vector<Point> pts;
        for (const auto& p : set.points())
            if (sh.contains(p.t, p.x)) pts.push_back(p);
        return SpaceTimeSet::from_points(std::move(pts), set.meta());
    }
    const std::int64_t s_top = Shell::below_exp(n), j_lo = Shell::neg_exp(n), j_hi = Shell::below_exp(n);
    const std::int64_t in_s = Shell::below_exp(n - 1), in_lo = Shell::neg_exp(n - 1), in_hi = Shell::below_exp(n - 1);
    std::vector<Column> out;
    for (const auto& c : set.columns()) {
        if (c.s > s_top) break;
        Column kept{c.s, {}};
        for (const auto& r : c.runs) {
            const std::int64_t lo = std::max(r.lo, j_lo), hi = std::min(r.hi, j_hi);
            if (lo > hi) continue;
            if (c.s > in_s) {
                kept.runs.push_back({lo, hi});
                continue;
            }
            if (lo < in_lo) kept.runs.push_back({lo, std::min(hi, in_lo - 1)});
            if (hi > in_hi) kept.runs.push_back({std::max(lo, in_hi + 1), hi});
        }
        if (!kept.runs.empty()) out.push_back(std::move(kept));
    }
    return SpaceTimeSet::from_columns(std::move(out), set.meta());
}

inline constexpr std::size_t kExactSmallBudget = 24;

namespace detail {

inline int top_level(int n) { return static_cast<int>(std::ceil(n * std::numbers::log2e - 1e-12)); }

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    const std::int64_t q = a / b;
    return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}

/// Clipped pixel set for shell n: real sets are clipped, then pixelated.
inline SpaceTimeSet clipped_pixels(const SpaceTimeSet& set, int n) {
    return set.is_pixel() ? shell_clip(set, n) : pixelate(shell_clip(set, n));
}

/// Occupied boxes of the 2^m grid anchored at the origin, m = 0..M.
inline std::vector<std::uint64_t> dyadic_counts(const SpaceTimeSet& px, int M) {
    std::vector<std::uint64_t> counts(static_cast<std::size_t>(M) + 1, 0);
    std::vector<std::pair<std::int64_t, std::int64_t>> iv;
    for (int m = 0; m <= M; ++m) {
        const std::int64_t r = std::int64_t{1} << m;
        const auto& cols = px.columns();
        std::size_t k = 0;
        while (k < cols.size()) {
            const std::int64_t bs = floor_div(cols[k].s, r);
            iv.clear();
            for (; k < cols.size() && floor_div(cols[k].s, r) == bs; ++k)
                for (const auto& run : cols[k].runs) iv.emplace_back(floor_div(run.lo, r), floor_div(run.hi, r));
            std::sort(iv.begin(), iv.end());
            std::int64_t cur_lo = iv[0].first, cur_hi = iv[0].second;
            for (std::size_t q = 1; q < iv.size(); ++q) {
                if (iv[q].first <= cur_hi + 1) {
                    cur_hi = std::max(cur_hi, iv[q].second);
                } else {
                    counts[m] += static_cast<std::uint64_t>(cur_hi - cur_lo + 1);
                    cur_lo = iv[q].first;
                    cur_hi = iv[q].second;
                }
            }
            counts[m] += static_cast<std::uint64_t>(cur_hi - cur_lo + 1);
        }
    }
    return counts;
}

/// (side / e^n)^rho for side = 2^level.
inline double box_cost(int level, int n, double rho) { return std::exp(rho * (level * std::numbers::ln2 - n)); }

/// Quadtree DP over boxes [σ + a 2^l, σ + (a+1) 2^l): cost of the best cover
/// using boxes of the tree, for every rho at once.
class QuadtreeCover {
public:
    QuadtreeCover(const SpaceTimeSet& px, int n, const std::vector<double>& rho) : px_(px), n_(n), rho_(rho) {}

    std::vector<double> run(std::int64_t shift_s, std::int64_t shift_j, int M) {
        std::vector<double> total(rho_.size(), 0.0);
        const auto& cols = px_.columns();
        if (cols.empty()) return total;
        std::int64_t jmin = std::numeric_limits<std::int64_t>::max(), jmax = std::numeric_limits<std::int64_t>::min();
        for (const auto& c : cols) {
            jmin = std::min(jmin, c.runs.front().lo);
            jmax = std::max(jmax, c.runs.back().hi);
        }
        const std::int64_t R = std::int64_t{1} << M;
        const std::int64_t a0 = floor_div(cols.front().s - shift_s, R), a1 = floor_div(cols.back().s - shift_s, R);
        const std::int64_t b0 = floor_div(jmin - shift_j, R), b1 = floor_div(jmax - shift_j, R);
        std::vector<double> node(rho_.size());
        for (std::int64_t a = a0; a <= a1; ++a)
            for (std::int64_t b = b0; b <= b1; ++b) {
                visit(shift_s + a * R, shift_j + b * R, M, node);
                for (std::size_t k = 0; k < rho_.size(); ++k) total[k] += node[k];
            }
        return total;
    }

private:
    void visit(std::int64_t s0, std::int64_t j0, int level, std::vector<double>& out) {
        const std::int64_t r = std::int64_t{1} << level;
        const std::uint64_t count = px_.count_in(s0, s0 + r - 1, j0, j0 + r - 1);
        if (count == 0) {
            std::fill(out.begin(), out.end(), 0.0);
            return;
        }
        if (count == static_cast<std::uint64_t>(r) * static_cast<std::uint64_t>(r)) {
            // Full box: tile by 4^(level-l) boxes of level l; the optimum is
            // at l = level for rho < 2 and at l = 0 otherwise.
            for (std::size_t k = 0; k < rho_.size(); ++k) {
                const double own = box_cost(level, n_, rho_[k]);
                const double units = std::ldexp(box_cost(0, n_, rho_[k]), 2 * level);
                out[k] = std::min(own, units);
            }
            return;
        }
        std::vector<double> sum(rho_.size(), 0.0), child(rho_.size());
        const std::int64_t h = r / 2;
        for (int q = 0; q < 4; ++q) {
            visit(s0 + (q & 1) * h, j0 + (q >> 1) * h, level - 1, child);
            for (std::size_t k = 0; k < rho_.size(); ++k) sum[k] += child[k];
        }
        for (std::size_t k = 0; k < rho_.size(); ++k) out[k] = std::min(sum[k], box_cost(level, n_, rho_[k]));
    }

    const SpaceTimeSet& px_;
    int n_;
    const std::vector<double>& rho_;
};

/// Exact weighted set cover over integer-corner, integer-side boxes.
class ExactCover {
public:
    explicit ExactCover(const std::vector<Pixel>& pts) : pts_(pts) {
        const std::size_t m = pts.size();
        // A cover box can be shrunk to corner (min s, min j) of what it covers
        // and side max(range) + 1; both corner coordinates come from points.
        std::unordered_map<std::uint32_t, std::int64_t> best;
        for (const auto& ps : pts)
            for (const auto& pj : pts) {
                const std::int64_t cs = ps.s, cj = pj.j;
                for (const auto& a : pts) {
                    if (a.s < cs || a.j < cj) continue;
                    const std::int64_t side = std::max(a.s - cs, a.j - cj) + 1;
                    std::uint32_t mask = 0;
                    for (std::size_t q = 0; q < m; ++q)
                        if (pts[q].s >= cs && pts[q].s < cs + side && pts[q].j >= cj && pts[q].j < cj + side)
                            mask |= 1u << q;
                    auto [it, fresh] = best.try_emplace(mask, side);
                    if (!fresh) it->second = std::min(it->second, side);
                }
            }
        std::vector<std::pair<std::uint32_t, std::int64_t>> cand(best.begin(), best.end());
        std::sort(cand.begin(), cand.end(), [](const auto& x, const auto& y) {
            return x.second != y.second ? x.second < y.second : x.first < y.first;
        });
        // Drop boxes dominated by a cheaper-or-equal box covering a superset.
        for (std::size_t k = 0; k < cand.size(); ++k) {
            bool dominated = false;
            for (std::size_t q = 0; q < cand.size() && !dominated; ++q)
                dominated = q != k && cand[q].second <= cand[k].second && (cand[q].first & cand[k].first) == cand[k].first &&
                            (cand[q].first != cand[k].first || q < k);
            if (!dominated) boxes_.push_back(cand[k]);
        }
        by_element_.resize(m);
        for (std::size_t b = 0; b < boxes_.size(); ++b)
            for (std::size_t q = 0; q < m; ++q)
                if (boxes_[b].first & (1u << q)) by_element_[q].push_back(b);
    }

    double solve(int n, double rho) {
        memo_.clear();
        cost_.resize(boxes_.size());
        for (std::size_t b = 0; b < boxes_.size(); ++b)
            cost_[b] = std::exp(rho * (std::log(static_cast<double>(boxes_[b].second)) - n));
        if (pts_.empty()) return 0.0;
        const std::uint32_t all = pts_.size() == 32 ? ~0u : ((1u << pts_.size()) - 1u);
        return best(all);
    }

private:
    double best(std::uint32_t uncovered) {
        if (uncovered == 0) return 0.0;
        if (auto it = memo_.find(uncovered); it != memo_.end()) return it->second;
        const int e = std::countr_zero(uncovered);
        double v = std::numeric_limits<double>::infinity();
        for (std::size_t b : by_element_[static_cast<std::size_t>(e)])
            v = std::min(v, cost_[b] + best(uncovered & ~boxes_[b].first));
        memo_.emplace(uncovered, v);
        return v;
    }

    const std::vector<Pixel>& pts_;
    std::vector<std::pair<std::uint32_t, std::int64_t>> boxes_;  // (covered mask, side)
    std::vector<std::vector<std::size_t>> by_element_;
    std::vector<double> cost_;
    std::unordered_map<std::uint32_t, double> memo_;
};

}  // namespace detail

struct ContentOptions {
    std::size_t exact_budget = kExactSmallBudget;
    /// Shifted quadtrees per axis for greedy_multiscale (total shifts squared).
    int shifts_per_axis = 4;
};

/// nu_{n,rho}(E) upper bounds (exact for exact_small) for every rho in `rho`.
inline std::vector<double> nu_content(const SpaceTimeSet& set, int n, const std::vector<double>& rho,
                                      CoverStrategy strategy, const ContentOptions& opt = {}) {
    if (n < 1) throw ValidationError("shell: n >= 1 required");
    for (double r : rho)
        if (!(r >= 0.0)) throw ValidationError("rho: rho >= 0 required");
    const auto px = detail::clipped_pixels(set, n);
    std::vector<double> out(rho.size(), 0.0);
    if (px.empty()) return out;
    const int M = detail::top_level(n);
    switch (strategy) {
        case CoverStrategy::exact_small: {
            if (px.size() > opt.exact_budget || px.size() > 32)
                throw ResourceError("exact_small: " + std::to_string(px.size()) + " points in shell " +
                                    std::to_string(n) + " exceed the budget of " + std::to_string(opt.exact_budget));
            const auto pts = px.pixels();
            detail::ExactCover cover(pts);
            for (std::size_t k = 0; k < rho.size(); ++k) out[k] = cover.solve(n, rho[k]);
            return out;
        }
        case CoverStrategy::single_scale: {
            const auto counts = detail::dyadic_counts(px, M);
            for (std::size_t k = 0; k < rho.size(); ++k) {
                double v = std::numeric_limits<double>::infinity();
                for (int m = 0; m <= M; ++m) v = std::min(v, static_cast<double>(counts[m]) * detail::box_cost(m, n, rho[k]));
                out[k] = v;
            }
            return out;
        }
        case CoverStrategy::greedy_multiscale: {
            detail::QuadtreeCover tree(px, n, rho);
            const std::int64_t R = std::int64_t{1} << M;
            const int per_axis = std::max(1, opt.shifts_per_axis);
            const std::int64_t step = std::max<std::int64_t>(1, R / per_axis);
            std::fill(out.begin(), out.end(), std::numeric_limits<double>::infinity());
            // The unshifted tree contains every single-scale cover, so the
            // result never exceeds single_scale.
            for (std::int64_t ds = 0; ds < R && ds < step * per_axis; ds += step)
                for (std::int64_t dj = 0; dj < R && dj < step * per_axis; dj += step) {
                    const auto c = tree.run(ds, dj, M);
                    for (std::size_t k = 0; k < rho.size(); ++k) out[k] = std::min(out[k], c[k]);
                }
            return out;
        }
    }
    return out;
}

inline double nu_content(const SpaceTimeSet& set, int n, double rho, CoverStrategy strategy,
                         const ContentOptions& opt = {}) {
    return nu_content(set, n, std::vector<double>{rho}, strategy, opt)[0];
}

/// mu_n(E) = #{(s, j) in E : e^n < s <= e^{n+1}, 0 <= j < e^{n(1-gamma)}}.
inline std::uint64_t mu_n(const SpaceTimeSet& set, int n, double gamma) {
    if (!set.is_pixel()) throw ValidationError("mu_n: needs a pixel set; call pixelate() first");
    if (!(gamma > 0.0 && gamma < 2.0)) throw ValidationError("gamma: gamma in (0, 2) required");
    if (n < 0) throw ValidationError("mu_n: n >= 0 required");
    const auto s_lo = static_cast<std::int64_t>(std::floor(std::exp(static_cast<double>(n)))) + 1;
    const auto s_hi = static_cast<std::int64_t>(std::floor(std::exp(n + 1.0)));
    const double jb = std::exp(n * (1.0 - gamma));
    const std::int64_t j_hi = static_cast<std::int64_t>(std::ceil(jb)) - 1;  // largest j < jb
    return set.count_in(s_lo, s_hi, 0, j_hi);
}

/// e^{-(2-gamma) n} mu_n(E): the density lower bound with the constant set to 1.
inline double density_lower_bound(const SpaceTimeSet& set, int n, double gamma) {
    return std::exp(-(2.0 - gamma) * n) * static_cast<double>(mu_n(set, n, gamma));
}

// ---------------------------------------------------------------------------

struct ContentRow {
    int n;
    double rho;
    double nu_hat;
    CoverStrategy strategy;
    std::optional<std::uint64_t> mu;
    std::optional<double> gamma;
    double partial_sum;  // sum of nu_hat over shells <= n at this rho
};

struct ContentTable {
    std::vector<ContentRow> rows;
};

/// Contents for shells n_lo..n_hi and every rho. Shells run in parallel;
/// the result does not depend on `workers`.
inline ContentTable content_table(const SpaceTimeSet& set, int n_lo, int n_hi, const std::vector<double>& rho,
                                  CoverStrategy strategy, std::optional<double> mu_gamma = std::nullopt,
                                  unsigned workers = 1, const ContentOptions& opt = {}) {
    if (n_lo < 1 || n_hi < n_lo) throw ValidationError("n_range: need 1 <= n_lo <= n_hi");
    const auto shells = static_cast<std::size_t>(n_hi - n_lo + 1);
    std::vector<std::vector<double>> nu(shells);
    // Largest shells first keeps the pool busy.
    parallel_for(shells, workers, [&](std::uint64_t k) {
        const std::size_t idx = shells - 1 - static_cast<std::size_t>(k);
        nu[idx] = nu_content(set, n_lo + static_cast<int>(idx), rho, strategy, opt);
    }, 1);
    ContentTable table;
    std::vector<double> partial(rho.size(), 0.0);
    for (std::size_t i = 0; i < shells; ++i) {
        const int n = n_lo + static_cast<int>(i);
        std::optional<std::uint64_t> mu;
        if (mu_gamma && set.is_pixel()) mu = mu_n(set, n, *mu_gamma);
        for (std::size_t k = 0; k < rho.size(); ++k) {
            partial[k] += nu[i][k];
            table.rows.push_back({n, rho[k], nu[i][k], strategy, mu, mu_gamma, partial[k]});
        }
    }
    return table;
}

inline void write_content_csv(std::ostream& os, const ContentTable& t) {
    os << "n,rho,nu_hat,mu_n,strategy,partial_sum\n";
    char buf[128];
    for (const auto& r : t.rows) {
        std::snprintf(buf, sizeof buf, "%d,%.6g,%.17g,", r.n, r.rho, r.nu_hat);
        os << buf << (r.mu ? std::to_string(*r.mu) : std::string()) << ',' << to_string(r.strategy) << ',';
        std::snprintf(buf, sizeof buf, "%.17g\n", r.partial_sum);
        os << buf;
    }
}

// ---------------------------------------------------------------------------

namespace detail {

struct Hinge {
    double knee;
    double slope;  // b(rho) = -slope * max(0, rho - knee)
    double sse;
};

/// Least-squares fit of b(rho) = -c max(0, rho - knee), c >= 0, knee on a
/// fine grid over [lo, hi].
inline Hinge fit_hinge(const std::vector<double>& rho, const std::vector<double>& b, double lo, double hi) {
    Hinge best{hi, 0.0, std::numeric_limits<double>::infinity()};
    const int steps = 2000;
    for (int q = 0; q <= steps; ++q) {
        const double knee = lo + (hi - lo) * q / steps;
        double shh = 0.0, sbh = 0.0;
        for (std::size_t i = 0; i < rho.size(); ++i) {
            const double h = std::max(0.0, rho[i] - knee);
            shh += h * h;
            sbh += b[i] * h;
        }
        const double c = shh > 0.0 ? std::max(0.0, -sbh / shh) : 0.0;
        double sse = 0.0;
        for (std::size_t i = 0; i < rho.size(); ++i) {
            const double r = b[i] + c * std::max(0.0, rho[i] - knee);
            sse += r * r;
        }
        // Prefer the largest knee among equal fits (flat data -> upper end).
        if (sse <= best.sse + 1e-15) best = {knee, c, sse};
    }
    return best;
}

}  // namespace detail

struct DimensionEstimate {
    bool defined = false;
    double rho_star = std::numeric_limits<double>::quiet_NaN();
    double band_lo = std::numeric_limits<double>::quiet_NaN();
    double band_hi = std::numeric_limits<double>::quiet_NaN();
    double decay_rate = 0.0;       // fitted hinge slope c
    double zero_crossing = std::numeric_limits<double>::quiet_NaN();  // first rho with smoothed b < -tol
    std::vector<double> rho;
    std::vector<double> slope;     // b(rho): LS slope of log nu_hat against n
    std::vector<double> slope_se;
    std::vector<double> slope_iso;
    int n_lo = 0, n_hi = 0;
    std::vector<int> shells_used;
    CoverStrategy strategy = CoverStrategy::single_scale;
    std::vector<std::string> notes;
};

inline std::vector<double> default_rho_grid() {
    std::vector<double> g;
    for (int k = 0; k <= 50; ++k) g.push_back(0.05 * k);
    return g;
}

/// Dimension read-off: per rho, slope b(rho) of log nu_hat vs n; b made
/// nonincreasing by isotonic regression; rho* is the knee of the hinge model
/// b = -c max(0, rho - rho*) (b ~ 0 below the dimension, decay above),
/// clamped to [0, 2].
inline DimensionEstimate dimension_estimate(const SpaceTimeSet& set, const std::vector<double>& rho_grid, int n_lo,
                                            int n_hi, CoverStrategy strategy = CoverStrategy::single_scale,
                                            unsigned workers = 1, const ContentOptions& opt = {}) {
    if (n_hi - n_lo + 1 < 4) throw ValidationError("n_range: at least 4 shells required");
    if (rho_grid.size() < 3 || !std::is_sorted(rho_grid.begin(), rho_grid.end()) || rho_grid.front() > 0.0 ||
        rho_grid.back() < 2.0)
        throw ValidationError("rho_grid: increasing grid spanning [0, 2] required");
    const auto table = content_table(set, n_lo, n_hi, rho_grid, strategy, std::nullopt, workers, opt);
    DimensionEstimate est;
    est.rho = rho_grid;
    est.n_lo = n_lo;
    est.n_hi = n_hi;
    est.strategy = strategy;
    const std::size_t K = rho_grid.size();
    // nu[i][k] for shell n_lo + i
    std::vector<std::vector<double>> nu(static_cast<std::size_t>(n_hi - n_lo + 1), std::vector<double>(K));
    for (std::size_t r = 0; r < table.rows.size(); ++r) nu[r / K][r % K] = table.rows[r].nu_hat;
    for (std::size_t i = 0; i < nu.size(); ++i)
        if (nu[i][0] > 0.0) est.shells_used.push_back(n_lo + static_cast<int>(i));
    if (est.shells_used.empty()) {
        est.notes.push_back("all shells empty: dimension undefined");
        return est;
    }
    est.defined = true;
    if (est.shells_used.size() < 2) {
        est.rho_star = est.band_lo = est.band_hi = 0.0;
        est.notes.push_back("set meets fewer than two shells in range: rho* = 0");
        return est;
    }
    if (est.shells_used.size() < nu.size()) est.notes.push_back("empty shells skipped in the slope fit");
    const auto m = static_cast<double>(est.shells_used.size());
    double nbar = 0.0;
    for (int n : est.shells_used) nbar += n;
    nbar /= m;
    double sxx = 0.0;
    for (int n : est.shells_used) sxx += (n - nbar) * (n - nbar);
    est.slope.resize(K);
    est.slope_se.resize(K);
    for (std::size_t k = 0; k < K; ++k) {
        double ybar = 0.0;
        for (int n : est.shells_used) ybar += std::log(nu[static_cast<std::size_t>(n - n_lo)][k]);
        ybar /= m;
        double sxy = 0.0;
        for (int n : est.shells_used) sxy += (n - nbar) * (std::log(nu[static_cast<std::size_t>(n - n_lo)][k]) - ybar);
        const double b = sxy / sxx;
        double sse = 0.0;
        for (int n : est.shells_used) {
            const double r = std::log(nu[static_cast<std::size_t>(n - n_lo)][k]) - ybar - b * (n - nbar);
            sse += r * r;
        }
        est.slope[k] = b;
        est.slope_se[k] = m > 2 ? std::sqrt(sse / (m - 2) / sxx) : 0.0;
    }
    est.slope_iso = stats::isotonic_nonincreasing(est.slope);
    const double knee_hi = std::max(2.0, rho_grid.back());
    const auto hinge = detail::fit_hinge(rho_grid, est.slope_iso, 0.0, knee_hi);
    est.rho_star = std::clamp(hinge.knee, 0.0, 2.0);
    est.decay_rate = hinge.slope;
    // Band: refit on the smoothed slopes shifted by two standard errors.
    std::vector<double> up(K), down(K);
    for (std::size_t k = 0; k < K; ++k) {
        up[k] = est.slope_iso[k] + 2.0 * est.slope_se[k];
        down[k] = est.slope_iso[k] - 2.0 * est.slope_se[k];
    }
    const double a = detail::fit_hinge(rho_grid, stats::isotonic_nonincreasing(down), 0.0, knee_hi).knee;
    const double c = detail::fit_hinge(rho_grid, stats::isotonic_nonincreasing(up), 0.0, knee_hi).knee;
    est.band_lo = std::clamp(std::min({a, c, hinge.knee}), 0.0, 2.0);
    est.band_hi = std::clamp(std::max({a, c, hinge.knee}), 0.0, 2.0);
    const double tol = 0.05;
    for (std::size_t k = 0; k < K; ++k)
        if (est.slope_iso[k] < -tol) {
            if (k == 0) {
                est.zero_crossing = rho_grid[0];
            } else {
                const double b0 = est.slope_iso[k - 1] + tol, b1 = est.slope_iso[k] + tol;
                est.zero_crossing = rho_grid[k - 1] + (rho_grid[k] - rho_grid[k - 1]) * b0 / (b0 - b1);
            }
            break;
        }
    return est;
}

inline nlohmann::json to_json(const DimensionEstimate& e) {
    nlohmann::json j;
    j["defined"] = e.defined;
    j["rho_star"] = e.defined ? nlohmann::json(e.rho_star) : nlohmann::json(nullptr);
    j["band"] = e.defined ? nlohmann::json::array({e.band_lo, e.band_hi}) : nlohmann::json(nullptr);
    j["decay_rate"] = e.decay_rate;
    j["zero_crossing"] = std::isnan(e.zero_crossing) ? nlohmann::json(nullptr) : nlohmann::json(e.zero_crossing);
    j["n_range"] = {e.n_lo, e.n_hi};
    j["shells_used"] = e.shells_used;
    j["strategy"] = to_string(e.strategy);
    j["rho"] = e.rho;
    j["slope"] = e.slope;
    j["slope_se"] = e.slope_se;
    j["slope_isotonic"] = e.slope_iso;
    j["notes"] = e.notes;
    return j;
}

}  // namespace pam
