#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "pam/level_sets.hpp"

using namespace pam;

namespace {

// Trajectory whose every snapshot is u = f(t) on 11 sites.
Trajectory synthetic(auto f, std::vector<double> times) {
    Trajectory tr;
    tr.grid.dx = 0.5;
    tr.grid.dt = 0.01;
    const Lattice lat{-2.5, 0.5, 11, Boundary::periodic};
    for (double t : times) tr.snapshots.push_back(LatticeField{t, std::vector<double>(lat.size, f(t)), lat});
    return tr;
}

}  // namespace

TEST(ValleySet, Examples) {
    const std::vector<double> times{1.0, 2.0, 2.7, 2.75, 4.0, 10.0};
    const auto tr = synthetic([](double t) { return std::exp(-t / 12); }, times);
    EXPECT_TRUE(valley_set(tr, 1.0 / 6).empty());
    const auto all = valley_set(tr, 1.0 / 24);
    EXPECT_EQ(all.size(), 3u * 11u);  // t = 2.75, 4, 10
    for (const auto& p : all.points()) EXPECT_GT(p.t, std::numbers::e);
}

TEST(ValleySet, ThresholdIsStrict) {
    const double gamma = 0.3;
    const auto tr = synthetic([&](double t) { return std::exp(-gamma * t); }, {3.0, 5.0});
    EXPECT_TRUE(valley_set(tr, gamma).empty());
    const auto below = synthetic([&](double t) { return std::nextafter(std::exp(-gamma * t), 0.0); }, {3.0, 5.0});
    EXPECT_EQ(valley_set(below, gamma).size(), 22u);
}

TEST(ValleySet, WarnsWithoutLateSnapshots) {
    const auto tr = synthetic([](double) { return 0.0; }, {0.5, 2.0});
    std::string warning;
    EXPECT_TRUE(valley_set(tr, 1.0, &warning).empty());
    EXPECT_FALSE(warning.empty());
    EXPECT_THROW(valley_set(tr, 0.0), ValidationError);
}

TEST(ValleySet, MonotoneInGamma) {
    GridSpec g;
    g.dx = 0.05;
    g.dt = 0.0025;
    g.x_min = -3;
    g.x_max = 3;
    g.t_end = 8.0;
    g.snapshot_times.clear();
    for (int k = 0; k <= 80; ++k) g.snapshot_times.push_back(0.1 * k);
    const auto tr = solve(g, FlatInit{1.0}, NoiseStream(8, 0));
    const std::vector<double> gammas{0.02, 0.05, 0.1, 0.2, 0.4};
    for (std::size_t k = 0; k + 1 < gammas.size(); ++k) {
        const auto loose = valley_set(tr, gammas[k]);
        const auto strict = valley_set(tr, gammas[k + 1]);
        EXPECT_TRUE(strict.subset_of(loose));
    }
    EXPECT_GT(valley_set(tr, 0.02).size(), valley_set(tr, 0.4).size());
}

TEST(Stretch, Examples) {
    const auto s = SpaceTimeSet::from_points({{2.0, 3.0}});
    const auto out = stretch(s, 1.0);
    EXPECT_NEAR(out.points()[0].t, 7.3890560989306504, 1e-14);
    EXPECT_EQ(out.points()[0].x, 3.0);
    const auto far = stretch(SpaceTimeSet::from_points({{1.0, 0.0}}), 1e6);
    EXPECT_NEAR(far.points()[0].t, 1.0 + 1e-6, 1e-5);
    // Second-order Taylor remainder: e^h - 1 - h <= h^2 for h = 1e-6.
    EXPECT_LE(far.points()[0].t - 1.0 - 1e-6, 1e-12);
}

TEST(Stretch, InjectiveOrderPreserving) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> d(0.01, 20.0);
    std::vector<Point> pts;
    for (int k = 0; k < 500; ++k) pts.push_back({d(rng), d(rng)});
    const auto in = SpaceTimeSet::from_points(pts);
    const auto out = stretch(in, 2.5);
    ASSERT_EQ(out.size(), in.size());
    for (std::size_t k = 0; k < in.size(); ++k) {
        EXPECT_EQ(out.points()[k].x, in.points()[k].x);
        if (k > 0 && in.points()[k].t > in.points()[k - 1].t) EXPECT_GT(out.points()[k].t, out.points()[k - 1].t);
    }
}

TEST(Pixelate, Examples) {
    const auto one = pixelate(SpaceTimeSet::from_points({{2.3, 0.7}}));
    EXPECT_EQ(one.pixels(), (std::vector<Pixel>{{2, 0}}));
    const auto integer = SpaceTimeSet::from_points({{2.0, -1.0}, {5.0, 3.0}});
    EXPECT_EQ(pixelate(integer).pixels(), (std::vector<Pixel>{{2, -1}, {5, 3}}));
    const auto pair = pixelate(SpaceTimeSet::from_points({{4.1, 1.2}, {4.9, 1.8}}));
    EXPECT_EQ(pair.size(), 1u);
    const auto negative = pixelate(SpaceTimeSet::from_points({{0.5, -0.5}}));
    EXPECT_EQ(negative.pixels(), (std::vector<Pixel>{{0, -1}}));
}

TEST(Pixelate, Idempotent) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> d(1.0, 30.0);
    std::vector<Point> pts;
    for (int k = 0; k < 2000; ++k) pts.push_back({d(rng), d(rng) - 15});
    const auto once = pixelate(SpaceTimeSet::from_points(pts));
    EXPECT_EQ(pixelate(once), once);
    EXPECT_EQ(pixelate(SpaceTimeSet::from_points([&] {
                  std::vector<Point> p;
                  for (const auto& px : once.pixels()) p.push_back({double(px.s), double(px.j)});
                  return p;
              }())),
              once);
}

TEST(SpaceTimeSet, Invariants) {
    EXPECT_THROW(SpaceTimeSet::from_points({{0.0, 1.0}}), ValidationError);
    EXPECT_THROW(SpaceTimeSet::from_points({{-1.0, 1.0}}), ValidationError);
    EXPECT_THROW(SpaceTimeSet::from_pixels({{-1, 0}}), ValidationError);
    const auto s = SpaceTimeSet::from_pixels({{3, 1}, {3, 2}, {3, 1}, {3, 4}, {1, 0}});
    EXPECT_EQ(s.size(), 4u);
    ASSERT_EQ(s.columns().size(), 2u);
    EXPECT_EQ(s.columns()[1].runs, (std::vector<pam::Run>{{1, 2}, {4, 4}}));
    EXPECT_EQ(s.count_in(0, 5, 1, 4), 3u);
    EXPECT_TRUE(s.contains(Pixel{3, 4}));
    EXPECT_FALSE(s.contains(Pixel{3, 3}));
}

TEST(XiQ, Membership) {
    const auto s = xi_q(1.0, 3);
    EXPECT_TRUE(s.contains(Pixel{3, 5}));
    EXPECT_FALSE(s.contains(Pixel{5, 3}));
    for (double q : {0.25, 0.5, 1.0, 1.5, 2.0, 3.0}) EXPECT_TRUE(xi_q(q, 2).contains(Pixel{1, 1})) << q;
}

TEST(XiQ, CountMatchesBruteForce) {
    for (double q : {2.0, 0.5, 1.0, 0.7, 1.3}) {
        const double top = std::exp(3.0);
        std::uint64_t count = 0;
        for (int x = 0; x < top; ++x)
            for (int y = -static_cast<int>(top) - 1; y < top; ++y)
                if (x > 0 && y > 0 && y >= -top && static_cast<double>(y) >= std::pow(double(x), q)) ++count;
        EXPECT_EQ(xi_q(q, 3).size(), count) << q;
    }
}

TEST(XiQ, BudgetAndValidation) {
    EXPECT_THROW(xi_q(0.5, 8, 1000), ResourceError);
    EXPECT_THROW(xi_q(0.0, 3), ValidationError);
    EXPECT_THROW(xi_q(1.0, 0), ValidationError);
    EXPECT_THROW(xi_q(0.5, 30), ResourceError);
    // Run-length storage keeps the large benchmark sets cheap.
    const auto big = xi_q(0.5, 12);
    EXPECT_GT(big.size(), 20'000'000'000ull);
    EXPECT_LT(big.columns().size(), 200'000u);
}

TEST(SetFile, RoundTrip) {
    auto s = SpaceTimeSet::from_pixels({{1, 2}, {1, 3}, {4, -7}});
    s.meta().source = "unit";
    s.meta().seed = 9;
    for (bool runs : {false, true}) {
        std::ostringstream os;
        write_set_csv(os, s, runs);
        EXPECT_EQ(os.str().rfind("# kind=pixel, source=unit, seed=9\n", 0), 0u);
        std::istringstream is(os.str());
        const auto back = read_set_csv(is);
        EXPECT_EQ(back, s);
        EXPECT_EQ(back.meta().seed, std::optional<std::uint64_t>(9));
    }
    const auto r = SpaceTimeSet::from_points({{0.1, 0.2}, {3.0, -1.0 / 3}});
    std::ostringstream os;
    write_set_csv(os, r);
    std::istringstream is(os.str());
    EXPECT_EQ(read_set_csv(is), r);
    std::istringstream bad("t,x\n1,2\n");
    EXPECT_THROW(read_set_csv(bad), FormatError);
    EXPECT_EQ(set_sidecar(s)["size"], 3);
}
