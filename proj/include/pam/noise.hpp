#pragma once

// Counter-addressed Gaussian source for lattice space-time white noise.
//
// Every value is a pure function of (master_seed, stream_id, time index,
// space index): a Philox4x32-10 block is keyed by a hash of the seed pair and
// addressed by the lattice coordinates, and the 64-bit output is mapped to a
// standard normal through the inverse normal CDF. Nothing is sequential, so
// any subset of the plane can be generated in any order by any thread.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>

#include "pam/detail/vmath.hpp"

namespace pam {

namespace philox {

using Counter = std::array<std::uint32_t, 4>;
using Key = std::array<std::uint32_t, 2>;

inline constexpr std::uint32_t kMul0 = 0xD2511F53u;
inline constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

constexpr Counter round(const Counter& c, const Key& k) noexcept {
    const std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

/// Philox4x32 with 10 rounds (Salmon et al., SC'11).
constexpr Counter philox4x32_10(Counter c, Key k) noexcept {
    c = round(c, k);
    for (int r = 1; r < 10; ++r) {
        k[0] += kWeyl0;
        k[1] += kWeyl1;
        c = round(c, k);
    }
    return c;
}

}  // namespace philox

/// splitmix64 finalizer; used for key and sub-seed derivation.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// Order-sensitive hash of two words. Sub-run seeds and stream keys both go
/// through this, never through sequential offsets.
constexpr std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) noexcept {
    return mix64(mix64(a) ^ (b + 0x632BE59BD9B4E019ull + (a << 6) + (a >> 2)));
}

/// Inverse of the standard normal CDF (Wichura, AS241 PPND16). Relative
/// accuracy about 1e-16 on (0, 1).
inline double normal_quantile(double p) noexcept {
    const double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                     6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                   1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
                 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
               (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                     3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                   5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
                 4.2313330701600911252e+1) * r + 1.0);
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-detail::log_normal_range(r));
    double val;
    if (r <= 5.0) {
        r -= 1.6;
        val = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
                  3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
                4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
              (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
                2.05319162663775882187e+0) * r + 1.0);
    } else {
        r -= 5.0;
        val = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
                5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
              (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    return q < 0.0 ? -val : val;
}

/// Maps 64 random bits to the open interval (0, 1): 53-bit grid, offset by
/// half a step so neither endpoint is reachable.
constexpr double bits_to_open_unit(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Batched normal_quantile, bit-identical to the scalar function. Both
/// branches are evaluated for every entry and blended so the loop
/// vectorises; the far tail (probability below exp(-25)) is patched after.
inline void quantiles(std::span<const double> p, std::span<double> out) noexcept {
    const std::size_t n = p.size();
    std::size_t far_tail = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double q = p[i] - 0.5;
        const double r = 0.180625 - q * q;
        const double central =
            q *
            (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                  6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
                1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
              1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
            (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                  3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
                5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
              4.2313330701600911252e+1) * r + 1.0);
        const double tail = q < 0.0 ? p[i] : 1.0 - p[i];
        const double s = std::sqrt(-detail::log_normal_range(tail));
        const double t = s - 1.6;
        const double val =
            (((((((7.74545014278341407640e-4 * t + 2.27238449892691845833e-2) * t +
                  2.41780725177450611770e-1) * t + 1.27045825245236838258e+0) * t +
                3.64784832476320460504e+0) * t + 5.76949722146069140550e+0) * t +
              4.63033784615654529590e+0) * t + 1.42343711074968357734e+0) /
            (((((((1.05075007164441684324e-9 * t + 5.47593808499534494600e-4) * t +
                  1.51986665636164571966e-2) * t + 1.48103976427480074590e-1) * t +
                6.89767334985100004550e-1) * t + 1.67638483018380384940e+0) * t +
              2.05319162663775882187e+0) * t + 1.0);
        out[i] = std::fabs(q) <= 0.425 ? central : (q < 0.0 ? -val : val);
        far_tail += s > 5.0 ? 1 : 0;
    }
    if (far_tail == 0) return;
    for (std::size_t i = 0; i < n; ++i)
        if (std::fabs(p[i] - 0.5) > 0.425 && std::sqrt(-detail::log_normal_range(std::min(p[i], 1.0 - p[i]))) > 5.0)
            out[i] = normal_quantile(p[i]);
}

/// Deterministic, random-access standard-normal field xi(n, i).
///
/// The space index is signed so that it can be tied to the absolute lattice
/// position round(x / dx); two solves on overlapping domains then see the same
/// noise at the same physical site. Space indices 2p and 2p + 1 share the
/// Philox block addressed by p (two 64-bit words per block).
class NoiseStream {
public:
    NoiseStream() = default;
    NoiseStream(std::uint64_t master_seed, std::uint64_t stream_id) noexcept
        : master_seed_(master_seed), stream_id_(stream_id) {
        const std::uint64_t k = hash_combine(master_seed, stream_id);
        key_ = {static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    }

    std::uint64_t master_seed() const noexcept { return master_seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    double gaussian(std::uint64_t n, std::int64_t i) const noexcept {
        const auto block = philox::philox4x32_10(counter(n, static_cast<std::uint64_t>(i >> 1)), key_);
        return normal_quantile(bits_to_open_unit(word(block, static_cast<std::uint64_t>(i & 1))));
    }

    /// out[k] = gaussian(n, i0 + k). Bit-identical to elementwise
    /// gaussian() calls; organised as separate passes so the Philox rounds
    /// and the central branch of the quantile vectorise.
    void plane(std::uint64_t n, std::int64_t i0, std::span<double> out) const noexcept {
        const std::size_t len = out.size();
        if (len == 0) return;
        // Floor division keeps pair indices contiguous across i = 0.
        const std::int64_t first_pair = i0 >> 1;
        const std::int64_t last_pair = (i0 + static_cast<std::int64_t>(len) - 1) >> 1;
        const auto n_lo = static_cast<std::uint32_t>(n);
        const auto n_hi = static_cast<std::uint32_t>(n >> 32);
        const auto skip = static_cast<std::size_t>(i0 & 1);

        constexpr std::size_t kChunk = 128;
        alignas(64) std::uint32_t c0[kChunk], c1[kChunk], c2[kChunk], c3[kChunk];
        alignas(64) double p[2 * kChunk];
        std::size_t k = 0;
        for (std::int64_t pair = first_pair; pair <= last_pair; pair += static_cast<std::int64_t>(kChunk)) {
            const auto m = static_cast<std::size_t>(std::min<std::int64_t>(kChunk, last_pair - pair + 1));
            for (std::size_t b = 0; b < m; ++b) {
                const auto pb = static_cast<std::uint64_t>(pair) + b;
                c0[b] = static_cast<std::uint32_t>(pb);
                c1[b] = static_cast<std::uint32_t>(pb >> 32);
                c2[b] = n_lo;
                c3[b] = n_hi;
            }
            std::uint32_t k0 = key_[0], k1 = key_[1];
            for (int r = 0; r < 10; ++r) {
                if (r > 0) {
                    k0 += philox::kWeyl0;
                    k1 += philox::kWeyl1;
                }
                for (std::size_t b = 0; b < m; ++b) {
                    const std::uint64_t p0 = std::uint64_t{philox::kMul0} * c0[b];
                    const std::uint64_t p1 = std::uint64_t{philox::kMul1} * c2[b];
                    const auto x0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1[b] ^ k0;
                    const auto x2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3[b] ^ k1;
                    c1[b] = static_cast<std::uint32_t>(p1);
                    c3[b] = static_cast<std::uint32_t>(p0);
                    c0[b] = x0;
                    c2[b] = x2;
                }
            }
            for (std::size_t b = 0; b < m; ++b) {
                p[2 * b] = bits_to_open_unit((std::uint64_t{c1[b]} << 32) | c0[b]);
                p[2 * b + 1] = bits_to_open_unit((std::uint64_t{c3[b]} << 32) | c2[b]);
            }
            const std::size_t begin = (pair == first_pair) ? skip : 0;
            const std::size_t count = std::min(2 * m - begin, len - k);
            quantiles(std::span<const double>(p + begin, count), out.subspan(k, count));
            k += count;
        }
    }

private:
    static constexpr philox::Counter counter(std::uint64_t n, std::uint64_t pair) noexcept {
        return {static_cast<std::uint32_t>(pair), static_cast<std::uint32_t>(pair >> 32),
                static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(n >> 32)};
    }
    static constexpr std::uint64_t word(const philox::Counter& b, std::uint64_t half) noexcept {
        return half == 0 ? (std::uint64_t{b[1]} << 32) | b[0] : (std::uint64_t{b[3]} << 32) | b[2];
    }

    std::uint64_t master_seed_ = 0;
    std::uint64_t stream_id_ = 0;
    philox::Key key_{};
};

/// Closed range of absolute space indices; empty when first > last.
struct IndexRange {
    std::int64_t first = 0;
    std::int64_t last = -1;

    bool empty() const noexcept { return first > last; }
    bool contains(std::int64_t i) const noexcept { return i >= first && i <= last; }
    friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

inline constexpr IndexRange kAllIndices{std::numeric_limits<std::int64_t>::min(),
                                        std::numeric_limits<std::int64_t>::max()};

/// Absence of noise. Differs from a source that happens to return 0: where
/// there is no noise the equation has no noise term at all, so the splitting
/// scheme applies no lognormal factor there (see support()).
struct ZeroNoise {
    IndexRange support() const noexcept { return {}; }
    void plane(std::uint64_t, std::int64_t, std::span<double> out) const noexcept {
        for (double& v : out) v = 0.0;
    }
};

/// Indices at which a source carries noise. Sources without a support()
/// member act everywhere.
template <class Source>
IndexRange support_of(const Source& s) noexcept {
    if constexpr (requires { s.support(); })
        return s.support();
    else
        return kAllIndices;
}

/// Restriction of a source to a closed window of absolute space indices;
/// zero outside. Indices outside the window are never requested from the
/// underlying source.
template <class Source>
class WindowedNoise {
public:
    WindowedNoise(const Source& src, std::int64_t first, std::int64_t last)
        : src_(&src), first_(first), last_(last) {}

    std::int64_t first() const noexcept { return first_; }
    std::int64_t last() const noexcept { return last_; }
    IndexRange support() const noexcept {
        const IndexRange inner = support_of(*src_);
        return {std::max(first_, inner.first), std::min(last_, inner.last)};
    }

    void plane(std::uint64_t n, std::int64_t i0, std::span<double> out) const {
        const auto len = static_cast<std::int64_t>(out.size());
        const std::int64_t lo = std::max(i0, first_);
        const std::int64_t hi = std::min(i0 + len - 1, last_);
        for (double& v : out) v = 0.0;
        if (lo > hi) return;
        src_->plane(n, lo, out.subspan(static_cast<std::size_t>(lo - i0),
                                       static_cast<std::size_t>(hi - lo + 1)));
    }

private:
    const Source* src_;
    std::int64_t first_;
    std::int64_t last_;
};

template <class T>
concept NoiseSource = requires(const T& s, std::span<double> out) {
    s.plane(std::uint64_t{}, std::int64_t{}, out);
};

}  // namespace pam
