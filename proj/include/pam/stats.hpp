#pragma once

// Small statistics toolkit: Wilson intervals, two-sample Kolmogorov-Smirnov,
// least squares, isotonic regression, quantiles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "pam/error.hpp"

namespace pam::stats {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

struct Interval {
    double lo;
    double hi;
};

/// Wilson score interval for a binomial proportion (z = 1.96 for 95%).
inline Interval wilson(std::uint64_t hits, std::uint64_t n, double z = 1.959963984540054) {
    if (n == 0) throw ValidationError("wilson: n > 0 required");
    const double N = static_cast<double>(n);
    const double p = static_cast<double>(hits) / N;
    const double z2 = z * z;
    const double denom = 1.0 + z2 / N;
    const double centre = (p + z2 / (2.0 * N)) / denom;
    const double half = z * std::sqrt(p * (1.0 - p) / N + z2 / (4.0 * N * N)) / denom;
    // Clamp against roundoff so the interval always contains p.
    return {std::min(p, std::max(0.0, centre - half)), std::max(p, std::min(1.0, centre + half))};
}

/// Kolmogorov distribution tail P(K > lambda).
inline double kolmogorov_q(double lambda) {
    if (lambda <= 0.0) return 1.0;
    if (lambda < 1.18) {
        // Small-lambda form: 1 - sqrt(2 pi)/lambda sum exp(-(2j-1)^2 pi^2 / (8 lambda^2)).
        const double y = -std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
        double s = 0.0;
        for (int j = 1; j <= 8; ++j) s += std::exp(y * (2 * j - 1) * (2 * j - 1));
        return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
    }
    double s = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        s += (j % 2 == 1 ? term : -term);
        if (term < 1e-17) break;
    }
    return std::clamp(2.0 * s, 0.0, 1.0);
}

struct KsResult {
    double statistic;
    double p_value;
    std::size_t n1, n2;
    bool exact;  // p-value from the exact null law rather than the asymptotic one
};

inline constexpr double kKsExactCells = 1e8;

/// Exact P(D >= dnum / (n1 n2)) under the null for continuous data. Lattice
/// paths from (0,0) to (n1,n2); w(i,j) is the fraction of paths into (i,j)
/// that stay strictly inside |i n2 - j n1| < dnum, and
/// w(i,j) = (i w(i-1,j) + j w(i,j-1)) / (i + j).
inline double ks_exact_tail(std::uint64_t n1, std::uint64_t n2, std::uint64_t dnum) {
    if (dnum == 0) return 1.0;
    auto inside = [&](std::uint64_t i, std::uint64_t j) {
        const auto a = i * n2, b = j * n1;
        return (a > b ? a - b : b - a) < dnum;
    };
    std::vector<double> w(n2 + 1, 0.0);
    w[0] = 1.0;
    for (std::uint64_t j = 1; j <= n2; ++j) w[j] = inside(0, j) ? w[j - 1] : 0.0;
    for (std::uint64_t i = 1; i <= n1; ++i) {
        w[0] = inside(i, 0) ? w[0] : 0.0;
        for (std::uint64_t j = 1; j <= n2; ++j)
            w[j] = inside(i, j) ? (static_cast<double>(i) * w[j] + static_cast<double>(j) * w[j - 1]) /
                                      static_cast<double>(i + j)
                                : 0.0;
    }
    return std::clamp(1.0 - w[n2], 0.0, 1.0);
}

/// Two-sample KS statistic. The p-value is exact while n1 n2 <= 1e8, else
/// asymptotic with Stephens' correction on n1 n2 / (n1 + n2).
inline KsResult ks_two_sample(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw ValidationError("ks_two_sample: both samples must be non-empty");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::uint64_t n1 = a.size(), n2 = b.size();
    std::uint64_t i = 0, j = 0, dnum = 0;
    while (i < n1 && j < n2) {
        const double v = std::min(a[i], b[j]);
        while (i < n1 && a[i] <= v) ++i;
        while (j < n2 && b[j] <= v) ++j;
        const auto x = i * n2, y = j * n1;
        dnum = std::max(dnum, x > y ? x - y : y - x);
    }
    const double d = static_cast<double>(dnum) / (static_cast<double>(n1) * static_cast<double>(n2));
    if (static_cast<double>(n1) * static_cast<double>(n2) <= kKsExactCells)
        return {d, ks_exact_tail(n1, n2, dnum), n1, n2, true};
    const double ne = std::sqrt(static_cast<double>(n1) * static_cast<double>(n2) / static_cast<double>(n1 + n2));
    return {d, kolmogorov_q((ne + 0.12 + 0.11 / ne) * d), n1, n2, false};
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
    double intercept_se = 0.0;
    double r2 = 0.0;
    std::size_t n = 0;
};

/// Ordinary least squares y = intercept + slope x.
inline LinearFit ols(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw ValidationError("ols: need at least two (x, y) pairs");
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0.0)) throw ValidationError("ols: x values are all equal");
    LinearFit f;
    f.n = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double sse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - f.intercept - f.slope * x[i];
        sse += r * r;
    }
    f.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    if (x.size() > 2) {
        const double s2 = sse / (n - 2.0);
        f.slope_se = std::sqrt(s2 / sxx);
        f.intercept_se = std::sqrt(s2 * (1.0 / n + mx * mx / sxx));
    }
    return f;
}

/// Least-squares nonincreasing fit (pool adjacent violators), optional weights.
inline std::vector<double> isotonic_nonincreasing(const std::vector<double>& y, const std::vector<double>& w = {}) {
    struct Block {
        double sum, weight;
        std::size_t len;
    };
    std::vector<Block> st;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double wi = w.empty() ? 1.0 : w[i];
        st.push_back({y[i] * wi, wi, 1});
        while (st.size() > 1 && st[st.size() - 2].sum / st[st.size() - 2].weight < st.back().sum / st.back().weight) {
            const Block b = st.back();
            st.pop_back();
            st.back().sum += b.sum;
            st.back().weight += b.weight;
            st.back().len += b.len;
        }
    }
    std::vector<double> out;
    out.reserve(y.size());
    for (const auto& b : st) out.insert(out.end(), b.len, b.sum / b.weight);
    return out;
}

/// Linear-interpolated sample quantile (type 7), q in [0, 1].
inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) throw ValidationError("quantile: empty sample");
    std::sort(v.begin(), v.end());
    const double h = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct MeanSe {
    double mean;
    double se;
};

inline MeanSe mean_se(std::span<const double> v) {
    if (v.empty()) throw ValidationError("mean_se: empty sample");
    const double n = static_cast<double>(v.size());
    double m = 0.0;
    for (double x : v) m += x;
    m /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return {m, v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0};
}

}  // namespace pam::stats
