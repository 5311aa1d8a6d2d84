#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <tuple>
#include <set>
#include <vector>

#include "pam/she/solver.hpp"

using namespace pam;

namespace {

struct ConstantNoise {
    double value;
    void plane(std::uint64_t, std::int64_t, std::span<double> out) const {
        for (double& v : out) v = value;
    }
};

struct RecordingStream {
    NoiseStream inner;
    mutable std::set<std::int64_t>* seen;
    void plane(std::uint64_t n, std::int64_t i0, std::span<double> out) const {
        for (std::size_t k = 0; k < out.size(); ++k) seen->insert(i0 + static_cast<std::int64_t>(k));
        inner.plane(n, i0, out);
    }
};

double heat_kernel(double t, double x) { return std::exp(-x * x / (2.0 * t)) / std::sqrt(2.0 * std::numbers::pi * t); }

GridSpec grid(double dx, double dt, double lo, double hi, double t_end, std::vector<double> snaps,
              Scheme scheme = Scheme::splitting, Boundary b = Boundary::periodic) {
    GridSpec g;
    g.dx = dx;
    g.dt = dt;
    g.x_min = lo;
    g.x_max = hi;
    g.t_end = t_end;
    g.snapshot_times = std::move(snaps);
    g.scheme = scheme;
    g.boundary = b;
    return g;
}

double max_rel_error(const LatticeField& f, double t, double xmax) {
    double worst = 0.0;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        const double x = f.lattice.x(i);
        if (std::fabs(x) > xmax + 1e-9) continue;
        worst = std::max(worst, std::fabs(f.values[i] / heat_kernel(t, x) - 1.0));
    }
    return worst;
}

}  // namespace

TEST(GridSpec, Validation) {
    auto g = grid(0.1, 0.01, -4, 4, 1, {0.5, 1.0}, Scheme::explicit_euler);
    EXPECT_TRUE(g.validate().ok());
    g.dt = 0.02;
    const auto d = g.validate();
    ASSERT_FALSE(d.ok());
    EXPECT_EQ(d.errors[0].key, "dt");
    EXPECT_NE(d.errors[0].rule.find("dt <= dx^2"), std::string::npos);

    g = grid(0.1, 0.01, -4, 4.05, 1, {});
    EXPECT_FALSE(g.validate().ok());
    g = grid(0.1, 0.01, -4, 4, 1, {0.505});
    EXPECT_FALSE(g.validate().ok());
    g = grid(0.1, 0.01, -4, 4, 1, {0.5, 0.3});
    EXPECT_FALSE(g.validate().ok());
    g = grid(0.1, 0.01, -4, 4, 1, {1.5});
    EXPECT_FALSE(g.validate().ok());
    g = grid(0.1, 0.05, -4, 4, 1, {}, Scheme::splitting, Boundary::absorbing);
    EXPECT_FALSE(g.validate().ok());
    g = grid(0.1, 0.04, -4, 4, 1, {}, Scheme::splitting, Boundary::absorbing);
    EXPECT_TRUE(g.validate().ok());
    g = grid(0.1, 0.01, -1, 1, 1, {});
    const auto w = g.validate();
    EXPECT_TRUE(w.ok());
    EXPECT_EQ(w.warnings.size(), 1u);
}

TEST(Init, DiracHasUnitMass) {
    const Lattice lat{-2.0, 0.05, 80, Boundary::periodic};
    const auto u = materialize(DiracInit{0.01}, lat);
    double mass = 0.0;
    for (double v : u) mass += v * lat.dx;
    EXPECT_NEAR(mass, 1.0, 1e-12);
    EXPECT_EQ(u[40], 1.0 / 0.05);
}

TEST(StepExplicit, FlatZeroNoiseIsExact) {
    const Lattice lat{-1.0, 0.1, 20, Boundary::periodic};
    LatticeField f{0.0, std::vector<double>(20, 1.0), lat};
    for (int k = 0; k < 10; ++k) f = step_explicit(f, ZeroNoise{}, 0.005);
    for (double v : f.values) EXPECT_EQ(v, 1.0);
}

TEST(StepExplicit, HandArithmetic) {
    // u = 2 with equal neighbours, xi = 1.5, dt = 1e-4, dx = 1e-2:
    // 2 + 2 * 1.5 * sqrt(1e-4 / 1e-2) = 2.3.
    const Lattice lat{0.0, 1e-2, 5, Boundary::periodic};
    LatticeField f{0.0, std::vector<double>(5, 2.0), lat};
    const auto g = step_explicit(f, ConstantNoise{1.5}, 1e-4);
    for (double v : g.values) EXPECT_NEAR(v, 2.3, 1e-14);
    EXPECT_THROW(step_explicit(f, ConstantNoise{0.0}, 2e-4), ValidationError);
}

TEST(StepExplicit, MeanIsHeatStep) {
    // Ito increment has zero mean: average over many noise draws of one step
    // equals the deterministic heat step.
    const Lattice lat{-1.0, 0.1, 20, Boundary::absorbing};
    std::vector<double> u0(20);
    for (std::size_t i = 0; i < 20; ++i) u0[i] = 1.0 + 0.5 * std::sin(0.3 * static_cast<double>(i));
    const LatticeField f{0.0, u0, lat};
    const auto heat = step_explicit(f, ZeroNoise{}, 0.005);
    const int N = 20000;
    std::vector<double> sum(20, 0.0), sq(20, 0.0);
    for (int s = 0; s < N; ++s) {
        const auto g = step_explicit(f, NoiseStream(8, s), 0.005);
        for (std::size_t i = 0; i < 20; ++i) {
            sum[i] += g.values[i];
            sq[i] += g.values[i] * g.values[i];
        }
    }
    for (std::size_t i = 0; i < 20; ++i) {
        const double m = sum[i] / N;
        const double se = std::sqrt((sq[i] / N - m * m) / N);
        EXPECT_LT(std::fabs(m - heat.values[i]), 4.0 * se) << i;
    }
}

TEST(StepSplitting, ZeroDrawAppliesItoFactor) {
    const Lattice lat{0.0, 0.05, 40, Boundary::periodic};
    const LatticeField f{0.0, std::vector<double>(40, 3.0), lat};
    const double dt = 0.0025;
    const auto g = step_splitting(f, ConstantNoise{0.0}, dt);
    const double sigma2 = dt / lat.dx;
    for (double v : g.values) EXPECT_NEAR(v, 3.0 * std::exp(-sigma2 / 2.0), 1e-13);
    // Absent noise: pure heat step, which fixes constants.
    const auto h = step_splitting(f, ZeroNoise{}, dt);
    for (double v : h.values) EXPECT_NEAR(v, 3.0, 1e-13);
}

TEST(StepSplitting, RejectsNonPositiveInput) {
    const Lattice lat{0.0, 0.05, 10, Boundary::periodic};
    LatticeField f{0.0, std::vector<double>(10, 1.0), lat};
    f.values[3] = 0.0;
    EXPECT_THROW(step_splitting(f, ZeroNoise{}, 0.001), DomainError);
}

TEST(StepSplitting, OneStepMeanIsOne) {
    const Lattice lat{-1.0, 0.05, 40, Boundary::periodic};
    const LatticeField f{0.0, std::vector<double>(40, 1.0), lat};
    const int N = 10000;
    double sum = 0.0, sq = 0.0;
    for (int s = 0; s < N; ++s) {
        const double v = step_splitting(f, NoiseStream(21, s), 0.0025).values[20];
        sum += v;
        sq += v * v;
    }
    const double m = sum / N;
    const double se = std::sqrt((sq / N - m * m) / N);
    EXPECT_LT(std::fabs(m - 1.0), 3.0 * se);
}

TEST(StepSplitting, PositivityOverRandomTrajectories) {
    for (int s = 0; s < 20; ++s) {
        const auto g = grid(0.05, 0.0025, -2, 2, 3, {0.5, 1, 2, 3}, Scheme::splitting,
                            s % 2 ? Boundary::periodic : Boundary::absorbing);
        const InitialData init = s % 3 ? InitialData{FlatInit{1.0}} : InitialData{DiracInit{0.0}};
        if (s % 3 == 0 && g.boundary == Boundary::absorbing) continue;  // dirac mass is 0 away from x0
        const auto tr = solve(g, init, NoiseStream(5, s));
        ASSERT_EQ(tr.status, RunStatus::ok);
        for (const auto& snap : tr.snapshots)
            for (double v : snap.values) {
                if (snap.t == 0.0) continue;
                ASSERT_GT(v, 0.0);
            }
    }
}

TEST(Solve, ZeroNoiseFlatIsConstant) {
    for (Scheme sc : {Scheme::splitting, Scheme::explicit_euler}) {
        const auto g = grid(0.05, 0.0025, -4, 4, 1, {0.0, 0.25, 1.0}, sc);
        const auto tr = solve(g, FlatInit{2.5}, ZeroNoise{});
        ASSERT_EQ(tr.snapshots.size(), 3u);
        for (const auto& s : tr.snapshots)
            for (double v : s.values) EXPECT_NEAR(v, 2.5, 1e-12);
    }
}

TEST(Solve, Deterministic) {
    const auto g = grid(0.05, 0.0025, -4, 4, 1, {0.5, 1.0});
    const auto a = solve(g, FlatInit{1.0}, NoiseStream(3, 7));
    const auto b = solve(g, FlatInit{1.0}, NoiseStream(3, 7));
    ASSERT_EQ(a.snapshots.size(), b.snapshots.size());
    for (std::size_t k = 0; k < a.snapshots.size(); ++k) EXPECT_EQ(a.snapshots[k].values, b.snapshots[k].values);
    const auto c = solve(g, FlatInit{1.0}, NoiseStream(3, 8));
    EXPECT_NE(a.snapshots[1].values, c.snapshots[1].values);
}

TEST(Solve, DiracZeroNoiseMatchesHeatKernel) {
    for (Scheme sc : {Scheme::splitting, Scheme::explicit_euler}) {
        const double dx = 0.01;
        const auto g = grid(dx, dx * dx / 2, -8, 8, 1, {0.25, 0.5, 1.0}, sc);
        const auto tr = solve(g, DiracInit{0.0}, ZeroNoise{});
        ASSERT_EQ(tr.snapshots.size(), 3u);
        for (const auto& s : tr.snapshots) {
            const double at0 = s.values[s.lattice.nearest(0.0)];
            EXPECT_LT(std::fabs(at0 / heat_kernel(s.t, 0.0) - 1.0), 1e-2) << s.t;
        }
        EXPECT_NEAR(tr.snapshots[1].values[800], 0.56419, 0.56419e-2);
    }
}

TEST(Solve, HeatKernelSecondOrderInDx) {
    // Splitting with no noise is the exact lattice heat semigroup: the error
    // against the continuum kernel is O(dx^2) and independent of dt.
    std::vector<double> errs;
    for (double dx : {0.04, 0.02, 0.01}) {
        const auto g = grid(dx, 0.01, -10, 10, 0.5, {0.5});
        const auto tr = solve(g, DiracInit{0.0}, ZeroNoise{});
        errs.push_back(max_rel_error(tr.snapshots[0], 0.5, 3.0));
    }
    EXPECT_LT(errs[2], 1e-2);
    EXPECT_NEAR(errs[0] / errs[1], 4.0, 0.4);
    EXPECT_NEAR(errs[1] / errs[2], 4.0, 0.4);
}

TEST(Solve, ExplicitDivergenceIsFlagged) {
    // A noise source with huge values drives the Euler scheme negative and
    // then to overflow.
    const auto g = grid(0.1, 0.01, -1, 1, 2, {2}, Scheme::explicit_euler);
    const auto tr = solve(g, FlatInit{1.0}, ConstantNoise{1e300});
    EXPECT_EQ(tr.status, RunStatus::diverged);
}

TEST(Solve, ResumeAfterCheckpointIsBitIdentical) {
    auto full_grid = grid(0.05, 0.0025, -4, 4, 1, {0.25, 0.5, 1.0});
    const NoiseStream ns(77, 4);
    const auto full = solve(full_grid, FlatInit{1.0}, ns, 77, 4);
    auto half_grid = full_grid;
    half_grid.t_end = 0.5;
    half_grid.snapshot_times = {0.25, 0.5};
    auto part = solve(half_grid, FlatInit{1.0}, ns, 77, 4);
    part.grid = full_grid;
    resume(part);
    ASSERT_EQ(part.snapshots.size(), full.snapshots.size());
    for (std::size_t k = 0; k < full.snapshots.size(); ++k) {
        EXPECT_EQ(part.snapshots[k].t, full.snapshots[k].t);
        EXPECT_EQ(part.snapshots[k].values, full.snapshots[k].values);
    }
}

TEST(Localized, WholeDomainEqualsSolve) {
    const auto g = grid(0.05, 0.0025, -4, 4, 0.5, {0.5});
    const NoiseStream ns(9, 1);
    const auto a = solve(g, FlatInit{1.0}, ns);
    // A window covering every site (site indices -80..79).
    const auto b = localized_solve(g, FlatInit{1.0}, ns, -0.025, 3.975);
    EXPECT_EQ(a.snapshots[0].values, b.snapshots[0].values);
}

TEST(Localized, DisjointWindowsReadDisjointNoise) {
    const auto g = grid(0.05, 0.0025, -4, 4, 0.25, {0.25});
    std::set<std::int64_t> left, right;
    localized_solve(g, FlatInit{1.0}, RecordingStream{NoiseStream(1, 0), &left}, -2.0, 1.0);
    localized_solve(g, FlatInit{1.0}, RecordingStream{NoiseStream(1, 0), &right}, 1.5, 1.0);
    ASSERT_FALSE(left.empty());
    ASSERT_FALSE(right.empty());
    for (auto i : left) EXPECT_EQ(right.count(i), 0u);
    EXPECT_EQ(*left.begin(), -60);
    EXPECT_EQ(*left.rbegin(), -20);
}

TEST(Localized, Validation) {
    const auto g = grid(0.05, 0.0025, -4, 4, 0.25, {0.25});
    EXPECT_THROW(localized_solve(g, FlatInit{1.0}, NoiseStream(1, 0), 0.0, 0.04), ValidationError);
    EXPECT_THROW(localized_solve(g, FlatInit{1.0}, NoiseStream(1, 0), 3.5, 1.0), ValidationError);
}

TEST(Localized, ErrorDecreasesWithWindow) {
    // E|u(1, 0) - Y(1, 0)| for windows {1, 2, 4}; decreasing.
    const auto g = grid(0.05, 0.0025, -8, 8, 1, {1.0});
    const int N = 300;
    std::vector<double> err(3, 0.0);
    const double widths[] = {1.0, 2.0, 4.0};
    for (int s = 0; s < N; ++s) {
        const NoiseStream ns(13, s);
        const auto u = solve(g, FlatInit{1.0}, ns).snapshots[0].values[160];
        for (int w = 0; w < 3; ++w)
            err[w] += std::fabs(u - localized_solve(g, FlatInit{1.0}, ns, 0.0, widths[w]).snapshots[0].values[160]);
    }
    EXPECT_GT(err[0], err[1]);
    EXPECT_GT(err[1], err[2]);
}

TEST(PeriodicHeat, MatchesSpectralSymbol) {
    // Oracle: apply the Fourier symbol exp(-dt (2/dx^2) sin^2(pi k/n)) with a
    // naive O(n^2) DFT in long double.
    for (auto [n, dx, dt] : {std::tuple{64u, 0.05, 0.0025}, std::tuple{50u, 0.1, 0.5}, std::tuple{31u, 0.02, 0.0001}}) {
        std::vector<double> u(n);
        for (std::size_t i = 0; i < n; ++i) u[i] = 1.0 + std::sin(0.7 * i) * std::cos(0.13 * i * i);
        std::vector<double> ref(n, 0.0);
        const long double pi = std::numbers::pi_v<long double>;
        for (std::size_t k = 0; k < n; ++k) {
            long double re = 0, im = 0;
            for (std::size_t i = 0; i < n; ++i) {
                re += u[i] * std::cos(2 * pi * k * i / n);
                im -= u[i] * std::sin(2 * pi * k * i / n);
            }
            const long double s = std::sin(pi * k / n);
            const long double damp = std::exp(-static_cast<long double>(dt) * 2 / (dx * dx) * s * s);
            for (std::size_t i = 0; i < n; ++i)
                ref[i] += static_cast<double>(damp * (re * std::cos(2 * pi * k * i / n) - im * std::sin(2 * pi * k * i / n)) / n);
        }
        PeriodicHeat h(n, dx, dt);
        h.apply(u);
        for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(u[i], ref[i], 1e-13) << n << " " << i;
    }
}

TEST(PeriodicHeat, KernelPositiveAndNormalised) {
    for (double tau : {0.01, 1.0, 7.5, 400.0}) {
        const auto q = detail::lattice_heat_weights(tau);
        double total = q[0];
        for (std::size_t k = 1; k < q.size(); ++k) total += 2 * q[k];
        EXPECT_NEAR(total, 1.0, 1e-15);
        for (double v : q) EXPECT_GT(v, 0.0);
    }
    // exp(-1) I_0(1) and exp(-1) I_1(1).
    const auto q = detail::lattice_heat_weights(1.0);
    EXPECT_NEAR(q[0], 0.46575960759364043, 1e-15);
    EXPECT_NEAR(q[1], 0.20791041534970844, 1e-15);
}

TEST(AbsorbingHeat, PositiveAndMassLosing) {
    AbsorbingHeat h(40, 0.05, 0.005);
    std::vector<double> u(40, 0.0);
    u[0] = 20.0;
    double before = 20.0;
    for (int k = 0; k < 50; ++k) {
        h.apply(u);
        double mass = 0.0;
        for (double v : u) {
            ASSERT_GE(v, 0.0);
            mass += v;
        }
        EXPECT_LT(mass, before);
        before = mass;
    }
}
