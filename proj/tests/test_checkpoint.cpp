#include <gtest/gtest.h>

#include <sstream>

#include "pam/she/checkpoint.hpp"

using namespace pam;

namespace {

Trajectory sample_trajectory(InitialData init = FlatInit{1.0}) {
    GridSpec g;
    g.dx = 0.1;
    g.dt = 0.01;
    g.x_min = -2.0;
    g.x_max = 2.0;
    g.t_end = 0.5;
    g.snapshot_times = {0.0, 0.25, 0.5};
    return solve(g, init, NoiseStream(123, 4));
}

void expect_equal(const Trajectory& a, const Trajectory& b) {
    ASSERT_EQ(a.snapshots.size(), b.snapshots.size());
    for (std::size_t k = 0; k < a.snapshots.size(); ++k) {
        EXPECT_EQ(a.snapshots[k].t, b.snapshots[k].t);
        EXPECT_EQ(a.snapshots[k].values, b.snapshots[k].values);
        EXPECT_EQ(a.snapshots[k].lattice, b.snapshots[k].lattice);
    }
    EXPECT_EQ(a.master_seed, b.master_seed);
    EXPECT_EQ(a.stream_id, b.stream_id);
    EXPECT_EQ(a.status, b.status);
    EXPECT_EQ(a.grid.dx, b.grid.dx);
    EXPECT_EQ(a.grid.dt, b.grid.dt);
    EXPECT_EQ(a.grid.x_min, b.grid.x_min);
    EXPECT_EQ(a.grid.x_max, b.grid.x_max);
    EXPECT_EQ(a.grid.t_end, b.grid.t_end);
    EXPECT_EQ(a.grid.snapshot_times, b.grid.snapshot_times);
    EXPECT_EQ(a.grid.scheme, b.grid.scheme);
    EXPECT_EQ(a.grid.boundary, b.grid.boundary);
    EXPECT_EQ(init_kind(a.init), init_kind(b.init));
}

}  // namespace

TEST(Checkpoint, RoundTrip) {
    for (const InitialData& init : {InitialData{FlatInit{1.5}}, InitialData{DiracInit{0.3}},
                                    InitialData{SampledInit{std::vector<double>(40, 0.7)}}}) {
        const auto tr = sample_trajectory(init);
        const auto bytes = checkpoint(tr);
        expect_equal(tr, restore(bytes));
    }
}

TEST(Checkpoint, LayoutIsLittleEndian) {
    const auto tr = sample_trajectory();
    const auto bytes = checkpoint(tr);
    ASSERT_GT(bytes.size(), 40u);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PAMF");
    EXPECT_EQ(bytes[4], 1);  // version 1, least significant byte first
    EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
    // dx = 0.1 = 0x3FB999999999999A
    const std::uint8_t dx_le[8] = {0x9A, 0x99, 0x99, 0x99, 0x99, 0x99, 0xB9, 0x3F};
    for (int k = 0; k < 8; ++k) EXPECT_EQ(bytes[8 + k], dx_le[k]);
    // site count 40 after dx, dt, t
    EXPECT_EQ(bytes[32], 40);
}

TEST(Checkpoint, BigEndianWriterEmulation) {
    const auto tr = sample_trajectory();
    const auto native = checkpoint(tr);
    const auto foreign = checkpoint(tr, std::endian::big);
    EXPECT_EQ(native, foreign);
    expect_equal(tr, restore(foreign));
}

TEST(Checkpoint, TruncationIsAFormatError) {
    const auto bytes = checkpoint(sample_trajectory());
    for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{7}, std::size_t{30}, bytes.size() / 2,
                            bytes.size() - 1}) {
        std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_THROW(restore(part), FormatError) << cut;
    }
}

TEST(Checkpoint, BadMagicAndVersion) {
    auto bytes = checkpoint(sample_trajectory());
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(restore(bad), FormatError);
    bad = bytes;
    bad[4] = 2;
    EXPECT_THROW(restore(bad), FormatError);
}

TEST(Checkpoint, NoisePlaneReproducedAfterRestart) {
    // Restore a stopped run and continue it: the continuation reads the same
    // noise plane and lands on the uninterrupted result.
    GridSpec g;
    g.dx = 0.05;
    g.dt = 0.0025;
    g.x_min = -4;
    g.x_max = 4;
    g.t_end = 1.0;
    g.snapshot_times = {0.5, 1.0};
    const auto full = solve(g, DiracInit{0.0}, NoiseStream(5, 5));
    auto half = g;
    half.t_end = 0.5;
    half.snapshot_times = {0.5};
    auto restored = restore(checkpoint(solve(half, DiracInit{0.0}, NoiseStream(5, 5))));
    restored.grid.t_end = 1.0;
    restored.grid.snapshot_times = {0.5, 1.0};
    resume(restored);
    ASSERT_EQ(restored.snapshots.size(), 2u);
    EXPECT_EQ(restored.snapshots[1].values, full.snapshots[1].values);
}

TEST(Csv, Columns) {
    const auto tr = sample_trajectory();
    std::ostringstream os;
    write_csv(os, tr);
    const std::string s = os.str();
    EXPECT_EQ(s.rfind("t,x,u\n", 0), 0u);
    std::size_t lines = 0;
    for (char c : s) lines += c == '\n';
    EXPECT_EQ(lines, 1 + 3 * 40u);
}
