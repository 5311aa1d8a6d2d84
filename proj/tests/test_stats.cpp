#include <gtest/gtest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <random>
#include <stdexcept>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>

#include "pam/ensemble.hpp"
#include "pam/stats.hpp"

using namespace pam;

namespace {

// Exact null law of the two-sample KS statistic for equal sizes n:
// P(D >= k/n) = 2 sum_{j>=1} (-1)^{j+1} C(2n, n - jk) / C(2n, n).
double exact_ks_tail(int n, int k) {
    auto log_choose = [](int a, int b) { return std::lgamma(a + 1.0) - std::lgamma(b + 1.0) - std::lgamma(a - b + 1.0); };
    double s = 0.0;
    for (int j = 1; n - j * k >= 0; ++j)
        s += (j % 2 == 1 ? 2.0 : -2.0) * std::exp(log_choose(2 * n, n - j * k) - log_choose(2 * n, n));
    return std::min(1.0, s);
}

}  // namespace

TEST(Wilson, ContainsEstimateAndStaysInUnitInterval) {
    for (std::uint64_t n : {1u, 7u, 100u, 100000u})
        for (std::uint64_t h = 0; h <= n; h += std::max<std::uint64_t>(1, n / 13)) {
            const auto ci = stats::wilson(h, n);
            const double p = static_cast<double>(h) / static_cast<double>(n);
            EXPECT_LE(ci.lo, p);
            EXPECT_GE(ci.hi, p);
            EXPECT_GE(ci.lo, 0.0);
            EXPECT_LE(ci.hi, 1.0);
        }
}

TEST(Wilson, ZeroHitsGivesOneSidedInterval) {
    const auto ci = stats::wilson(0, 1000);
    EXPECT_EQ(ci.lo, 0.0);
    // Closed form at p = 0: z^2 / (n + z^2).
    const double z2 = 1.959963984540054 * 1.959963984540054;
    EXPECT_NEAR(ci.hi, z2 / (1000 + z2), 1e-15);
}

TEST(Wilson, CoverageNearNominal) {
    // Exact coverage under Binomial(n, p) summed from the pmf.
    for (double p : {0.01, 0.2, 0.5}) {
        const std::uint64_t n = 400;
        boost::math::binomial_distribution<> bin(static_cast<double>(n), p);
        double cover = 0.0;
        for (std::uint64_t h = 0; h <= n; ++h) {
            const auto ci = stats::wilson(h, n);
            if (ci.lo <= p && p <= ci.hi) cover += boost::math::pdf(bin, static_cast<double>(h));
        }
        EXPECT_GT(cover, 0.92) << p;
        EXPECT_LT(cover, 0.98) << p;
    }
}

TEST(KolmogorovSmirnov, StatisticOnHandExample) {
    const auto r = stats::ks_two_sample({1, 2, 3}, {4, 5, 6});
    EXPECT_DOUBLE_EQ(r.statistic, 1.0);
    const auto s = stats::ks_two_sample({1, 3, 5, 7}, {2, 4, 6, 8});
    EXPECT_DOUBLE_EQ(s.statistic, 0.25);
    const auto t = stats::ks_two_sample({1, 2, 3}, {1, 2, 3});
    EXPECT_DOUBLE_EQ(t.statistic, 0.0);
    EXPECT_DOUBLE_EQ(t.p_value, 1.0);
}

TEST(KolmogorovSmirnov, PValueMatchesExactNullForEqualSizes) {
    const int n = 200;
    for (int k = 10; k <= 40; k += 3) {
        std::vector<double> a(n), b(n);
        // Construct samples whose statistic is exactly k/n.
        for (int i = 0; i < n; ++i) {
            a[i] = i;
            b[i] = i + k - 0.5;
        }
        const auto r = stats::ks_two_sample(a, b);
        ASSERT_NEAR(r.statistic, static_cast<double>(k) / n, 1e-12);
        EXPECT_TRUE(r.exact);
        EXPECT_NEAR(r.p_value, exact_ks_tail(n, k), 1e-10) << k;
        // The asymptotic law is close but not within this tolerance.
        const double ne = std::sqrt(n / 2.0);
        EXPECT_NEAR(stats::kolmogorov_q((ne + 0.12 + 0.11 / ne) * r.statistic), exact_ks_tail(n, k), 0.03);
    }
}

TEST(KolmogorovSmirnov, UnequalSizesMatchPermutationCount) {
    // n1 = 2, n2 = 3: all C(5,2) = 10 interleavings enumerated by hand.
    // D = 1 for aa|bbb and bbb|aa only, so P(D >= 1) = 0.2.
    const auto r = stats::ks_two_sample({1, 2}, {3, 4, 5});
    EXPECT_DOUBLE_EQ(r.statistic, 1.0);
    EXPECT_NEAR(r.p_value, 0.2, 1e-14);
    EXPECT_NEAR(stats::ks_exact_tail(2, 3, 0), 1.0, 0.0);
}

TEST(KolmogorovSmirnov, NullPValuesRoughlyUniform) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    int small = 0;
    const int reps = 400;
    for (int r = 0; r < reps; ++r) {
        std::vector<double> a(300), b(300);
        for (auto& v : a) v = g(rng);
        for (auto& v : b) v = g(rng);
        small += stats::ks_two_sample(a, b).p_value < 0.05;
    }
    EXPECT_LT(small, 40);  // expected 20, sd 4.4
}

TEST(KolmogorovSmirnov, ExactTailAgreesWithFullEnumeration) {
    // All C(11, 4) splits of the ranks 0..10 into samples of sizes 4 and 7.
    const int n1 = 4, n = 11;
    std::vector<double> stat;
    for (int mask = 0; mask < (1 << n); ++mask) {
        if (__builtin_popcount(mask) != n1) continue;
        std::vector<double> a, b;
        for (int i = 0; i < n; ++i) (mask >> i & 1 ? a : b).push_back(i);
        stat.push_back(stats::ks_two_sample(a, b).statistic);
    }
    for (int mask = 0; mask < (1 << n); mask += 37) {
        if (__builtin_popcount(mask) != n1) continue;
        std::vector<double> a, b;
        for (int i = 0; i < n; ++i) (mask >> i & 1 ? a : b).push_back(i);
        const auto r = stats::ks_two_sample(a, b);
        const double tail = static_cast<double>(std::count_if(stat.begin(), stat.end(), [&](double d) {
                                return d >= r.statistic - 1e-12;
                            })) /
                            static_cast<double>(stat.size());
        EXPECT_NEAR(r.p_value, tail, 1e-12) << mask;
    }
}

TEST(Ols, RecoversExactLine) {
    std::vector<double> x{0, 1, 2, 3, 4}, y;
    for (double v : x) y.push_back(2.5 - 0.75 * v);
    const auto f = stats::ols(x, y);
    EXPECT_NEAR(f.slope, -0.75, 1e-14);
    EXPECT_NEAR(f.intercept, 2.5, 1e-14);
    EXPECT_NEAR(f.r2, 1.0, 1e-14);
    EXPECT_NEAR(f.slope_se, 0.0, 1e-12);
}

TEST(Ols, StandardErrorMatchesTextbookFormula) {
    const std::vector<double> x{1, 2, 3, 4, 5, 6}, y{1.1, 1.9, 3.2, 3.8, 5.3, 5.7};
    const auto f = stats::ols(x, y);
    // Hand values: sxx = 17.5, slope = sxy / sxx.
    double sxy = 0.0;
    for (int i = 0; i < 6; ++i) sxy += (x[i] - 3.5) * (y[i] - 3.5);
    EXPECT_NEAR(f.slope, sxy / 17.5, 1e-14);
    double sse = 0.0;
    for (int i = 0; i < 6; ++i) sse += std::pow(y[i] - f.intercept - f.slope * x[i], 2);
    EXPECT_NEAR(f.slope_se, std::sqrt(sse / 4 / 17.5), 1e-14);
    EXPECT_THROW(stats::ols(std::vector<double>{1, 1}, std::vector<double>{0, 1}), ValidationError);
}

TEST(Isotonic, SatisfiesOptimalityConditions) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> y(1 + rep % 9);
        for (auto& v : y) v = u(rng);
        const auto f = stats::isotonic_nonincreasing(y);
        ASSERT_EQ(f.size(), y.size());
        for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LE(f[i], f[i - 1] + 1e-15);
        // Sum is preserved and each pooled block's value is its mean.
        EXPECT_NEAR(std::accumulate(f.begin(), f.end(), 0.0), std::accumulate(y.begin(), y.end(), 0.0), 1e-12);
        // KKT for a nonincreasing fit: within each block, partial sums of
        // y - f are nonpositive.
        std::size_t i = 0;
        while (i < f.size()) {
            std::size_t j = i;
            while (j + 1 < f.size() && f[j + 1] == f[i]) ++j;
            double part = 0.0;
            for (std::size_t k = i; k <= j; ++k) {
                part += y[k] - f[k];
                EXPECT_LE(part, 1e-12);
            }
            i = j + 1;
        }
    }
}

TEST(Isotonic, AlreadyMonotoneIsUnchanged) {
    const std::vector<double> y{5, 4, 4, 1, 0};
    EXPECT_EQ(stats::isotonic_nonincreasing(y), y);
    EXPECT_EQ(stats::isotonic_nonincreasing({1, 3}), (std::vector<double>{2, 2}));
}

TEST(Quantile, InterpolatesSortedSample) {
    EXPECT_DOUBLE_EQ(stats::quantile({3, 1, 2}, 0.5), 2.0);
    EXPECT_DOUBLE_EQ(stats::quantile({1, 2, 3, 4}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(stats::quantile({1, 2, 3, 4}, 0.0), 1.0);
    EXPECT_DOUBLE_EQ(stats::quantile({1, 2, 3, 4}, 1.0), 4.0);
}

TEST(NormalCdf, AgreesWithBoost) {
    boost::math::normal_distribution<> n;
    for (double z = -8; z <= 8; z += 0.37) EXPECT_NEAR(stats::normal_cdf(z), boost::math::cdf(n, z), 1e-15);
}

TEST(ParallelMap, ResultIndependentOfWorkerCount) {
    auto f = [](std::uint64_t i) { return std::sin(static_cast<double>(i)) * static_cast<double>(i % 17); };
    const auto one = parallel_map(1000, 1, f, 7);
    for (unsigned w : {2u, 3u, 8u}) EXPECT_EQ(parallel_map(1000, w, f, 7), one);
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
    std::vector<std::atomic<int>> seen(517);
    parallel_for(seen.size(), 4, [&](std::uint64_t i) { seen[i]++; }, 5);
    for (auto& s : seen) EXPECT_EQ(s.load(), 1);
    parallel_for(0, 4, [&](std::uint64_t) { FAIL(); });
}

TEST(ParallelFor, RethrowsWorkerFailure) {
    EXPECT_THROW(parallel_for(100, 3, [](std::uint64_t i) {
                     if (i == 42) throw DomainError("boom");
                 }),
                 DomainError);
}

TEST(DefaultWorkers, ReadsEnvironment) {
    ::setenv(kWorkersEnv, "3", 1);
    EXPECT_EQ(default_workers(), 3u);
    ::setenv(kWorkersEnv, "zero", 1);
    EXPECT_THROW(default_workers(), ValidationError);
    ::setenv(kWorkersEnv, "0", 1);
    EXPECT_THROW(default_workers(), ValidationError);
    ::unsetenv(kWorkersEnv);
    EXPECT_GE(default_workers(), 1u);
}
