#pragma once

// Heat substeps for the splitting scheme. Both propagate the lattice heat
// equation du/dt = (1/2) D2 u, D2 the 3-point Laplacian, over one time step:
// exactly on a periodic lattice, by Crank-Nicolson with zero exterior values
// on an absorbing lattice.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <numbers>
#include <span>
#include <vector>

#include "pam/she/grid.hpp"

namespace pam {

namespace detail {

/// Transition weights q_k = exp(-tau) I_k(tau), k >= 0, of the continuous
/// time simple random walk with total jump rate tau, i.e. the kernel of
/// exp(tau (D2 / 2) dx^2). Computed by Miller's backward recurrence and
/// normalised by q_0 + 2 sum q_k = 1; truncated once q_k < 2^-64 q_0.
inline std::vector<double> lattice_heat_weights(double tau) {
    if (!(tau > 0.0)) return {1.0};
    // Start well beyond the Gaussian tail: q_k ~ exp(-k^2 / (2 tau)).
    const auto start = static_cast<std::size_t>(40.0 + 12.0 * std::sqrt(tau) + 2.0 * tau / 50.0);
    std::vector<double> I(start + 2, 0.0);
    I[start] = 1e-300;
    for (std::size_t k = start; k > 0; --k) {
        I[k - 1] = I[k + 1] + (2.0 * static_cast<double>(k) / tau) * I[k];
        if (I[k - 1] > 1e250)  // rescale to stay finite
            for (std::size_t j = k - 1; j <= start; ++j) I[j] *= 1e-250;
    }
    long double total = I[0];
    for (std::size_t k = 1; k <= start; ++k) total += 2.0L * I[k];
    std::vector<double> q;
    for (std::size_t k = 0; k <= start; ++k) {
        const double v = static_cast<double>(I[k] / total);
        if (k > 0 && v < 0x1p-64 * q[0]) break;
        q.push_back(v);
    }
    return q;
}

}  // namespace detail

/// Exact lattice heat semigroup exp(dt * D2 / 2) on a periodic lattice: the
/// operator whose Fourier symbol damps mode k by
/// exp(-dt * (2/dx^2) * sin^2(pi k / n)). Applied as a circular convolution
/// with its strictly positive kernel, so positive data stay positive and
/// nonnegative data stay nonnegative.
class PeriodicHeat {
public:
    PeriodicHeat(std::size_t n, double dx, double dt) : n_(n) {
        const std::vector<double> q = detail::lattice_heat_weights(dt / (dx * dx));
        const auto K = static_cast<std::int64_t>(q.size()) - 1;
        if (2 * K + 1 < static_cast<std::int64_t>(n)) {
            half_ = static_cast<std::size_t>(K);
            taps_.resize(2 * half_ + 1);
            for (std::int64_t d = -K; d <= K; ++d) taps_[static_cast<std::size_t>(d + K)] = q[std::abs(d)];
        } else {
            // Kernel wider than the ring: fold it onto n offsets.
            std::vector<long double> fold(n, 0.0L);
            const auto ln = static_cast<std::int64_t>(n);
            for (std::int64_t d = -K; d <= K; ++d) fold[static_cast<std::size_t>(((d % ln) + ln) % ln)] += q[std::abs(d)];
            half_ = n / 2;
            taps_.assign(n, 0.0);
            // Offsets -half .. n-1-half cover every residue once.
            for (std::size_t j = 0; j < n; ++j) {
                const std::int64_t d = static_cast<std::int64_t>(j) - static_cast<std::int64_t>(half_);
                taps_[j] = static_cast<double>(fold[static_cast<std::size_t>(((d % ln) + ln) % ln)]);
            }
        }
        ext_.resize(n + taps_.size() - 1);
        out_.resize(n);
    }

    const std::vector<double>& taps() const noexcept { return taps_; }

    void apply(std::span<double> u) {
        const std::size_t n = n_;
        const std::size_t h = half_;
        // ext[j] = u[(j - h) mod n]
        std::size_t src = (n - h % n) % n;
        for (std::size_t j = 0; j < ext_.size();) {
            const std::size_t len = std::min(n - src, ext_.size() - j);
            std::copy(u.begin() + static_cast<std::ptrdiff_t>(src), u.begin() + static_cast<std::ptrdiff_t>(src + len),
                      ext_.begin() + static_cast<std::ptrdiff_t>(j));
            j += len;
            src = 0;
        }
        const double* __restrict ext = ext_.data();
        const double* __restrict w = taps_.data();
        const std::size_t ntaps = taps_.size();
        constexpr std::size_t B = 32;
        std::size_t i = 0;
        for (; i + B <= n; i += B) {
            double acc[B] = {};
            for (std::size_t t = 0; t < ntaps; ++t)
                for (std::size_t b = 0; b < B; ++b) acc[b] += w[t] * ext[i + t + b];
            std::copy(acc, acc + B, out_.data() + i);
        }
        for (; i + 8 <= n; i += 8) {
            double acc[8] = {};
            for (std::size_t t = 0; t < ntaps; ++t)
                for (std::size_t b = 0; b < 8; ++b) acc[b] += w[t] * ext[i + t + b];
            std::copy(acc, acc + 8, out_.data() + i);
        }
        for (; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t t = 0; t < ntaps; ++t) acc += w[t] * ext[i + t];
            out_[i] = acc;
        }
        std::copy(out_.begin(), out_.end(), u.begin());
    }

private:
    std::size_t n_;
    std::size_t half_ = 0;
    std::vector<double> taps_;
    std::vector<double> ext_;
    std::vector<double> out_;
};

/// Crank-Nicolson step of du/dt = (1/2) D2 u with u = 0 outside the lattice.
/// Positivity preserving for dt <= 2 dx^2.
class AbsorbingHeat {
public:
    AbsorbingHeat(std::size_t n, double dx, double dt) : r_(dt / (4.0 * dx * dx)), cp_(n), inv_(n), rhs_(n) {
        // Thomas factorisation of tridiag(-r, 1 + 2r, -r), done once.
        const double diag = 1.0 + 2.0 * r_;
        double denom = diag;
        inv_[0] = 1.0 / denom;
        cp_[0] = -r_ * inv_[0];
        for (std::size_t i = 1; i < n; ++i) {
            denom = diag + r_ * cp_[i - 1];
            inv_[i] = 1.0 / denom;
            cp_[i] = -r_ * inv_[i];
        }
    }

    void apply(std::span<double> u) {
        const std::size_t n = u.size();
        for (std::size_t i = 0; i < n; ++i) {
            const double left = i > 0 ? u[i - 1] : 0.0;
            const double right = i + 1 < n ? u[i + 1] : 0.0;
            rhs_[i] = (1.0 - 2.0 * r_) * u[i] + r_ * (left + right);
        }
        u[0] = rhs_[0] * inv_[0];
        for (std::size_t i = 1; i < n; ++i) u[i] = (rhs_[i] + r_ * u[i - 1]) * inv_[i];
        for (std::size_t i = n - 1; i-- > 0;) u[i] -= cp_[i] * u[i + 1];
    }

private:
    double r_;
    std::vector<double> cp_;
    std::vector<double> inv_;
    std::vector<double> rhs_;
};

}  // namespace pam
