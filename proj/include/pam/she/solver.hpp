#pragma once

// Time stepping for du = (1/2) u_xx dt + u dW on a finite lattice.
//
// The noise increment over cell (i, n) is xi(n, i) * sqrt(dt / dx), with xi
// drawn from a NoiseSource addressed by absolute lattice index. Step n moves
// the field from t = n dt to (n + 1) dt and reads noise time index n.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "pam/detail/vmath.hpp"
#include "pam/noise.hpp"
#include "pam/she/grid.hpp"
#include "pam/she/heat.hpp"

namespace pam {

/// u(t, x_min + i dx) on one time slice.
struct LatticeField {
    double t = 0.0;
    std::vector<double> values;
    Lattice lattice;

    bool all_finite() const noexcept {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

enum class RunStatus { ok, diverged };

inline std::string_view to_string(RunStatus s) { return s == RunStatus::ok ? "ok" : "diverged"; }

struct Trajectory {
    std::vector<LatticeField> snapshots;
    GridSpec grid;
    InitialData init;
    std::uint64_t master_seed = 0;
    std::uint64_t stream_id = 0;
    RunStatus status = RunStatus::ok;
};

/// Advances a field in place by one step of the configured scheme. Owns the
/// scratch buffers and, for the splitting scheme, the heat operator.
class Stepper {
public:
    Stepper(const Lattice& lat, double dt, Scheme scheme)
        : lat_(lat), dt_(dt), scheme_(scheme), sigma_(std::sqrt(dt / lat.dx)), xi_(lat.size), tmp_(lat.size) {
        // Splitting runs half a heat step on each side of the noise factor.
        if (scheme == Scheme::splitting) {
            if (lat.boundary == Boundary::periodic)
                heat_.emplace<PeriodicHeat>(lat.size, lat.dx, 0.5 * dt);
            else
                heat_.emplace<AbsorbingHeat>(lat.size, lat.dx, 0.5 * dt);
        }
    }

    double dt() const noexcept { return dt_; }
    double sigma() const noexcept { return sigma_; }

    /// One step using noise time index n. Sites outside the source's
    /// support get no noise term. Returns false when the result contains a
    /// non-finite value.
    template <NoiseSource Noise>
    bool step(std::span<double> u, const Noise& noise, std::uint64_t n) {
        const IndexRange sup = support_of(noise);
        const std::int64_t i0 = lat_.first_index();
        const auto size = static_cast<std::int64_t>(u.size());
        const std::int64_t lo = std::max<std::int64_t>(sup.first, i0) - i0;
        const std::int64_t hi = std::min<std::int64_t>(sup.last, i0 + size - 1) - i0;
        const auto a = static_cast<std::size_t>(std::clamp<std::int64_t>(lo, 0, size));
        const auto b = std::max(a, static_cast<std::size_t>(std::clamp<std::int64_t>(hi + 1, 0, size)));
        if (b > a) noise.plane(n, i0 + static_cast<std::int64_t>(a), std::span<double>(xi_).subspan(a, b - a));
        return scheme_ == Scheme::splitting ? split(u, a, b) : explicit_euler(u, a, b);
    }

private:
    bool explicit_euler(std::span<double> u, std::size_t a, std::size_t b) {
        const std::size_t n = u.size();
        const double r = dt_ / (2.0 * lat_.dx * lat_.dx);
        const bool periodic = lat_.boundary == Boundary::periodic;
        bool finite = true;
        for (std::size_t i = 0; i < n; ++i) {
            const double left = i > 0 ? u[i - 1] : (periodic ? u[n - 1] : 0.0);
            const double right = i + 1 < n ? u[i + 1] : (periodic ? u[0] : 0.0);
            const double noise = (i >= a && i < b) ? u[i] * xi_[i] * sigma_ : 0.0;
            const double v = u[i] + r * (left - 2.0 * u[i] + right) + noise;
            tmp_[i] = v;
            finite &= std::isfinite(v);
        }
        std::copy(tmp_.begin(), tmp_.end(), u.begin());
        return finite;
    }

    void half_heat(std::span<double> u) {
        std::visit(
            [&](auto& h) {
                if constexpr (!std::is_same_v<std::decay_t<decltype(h)>, std::monostate>) h.apply(u);
            },
            heat_);
    }

    bool split(std::span<double> u, std::size_t a, std::size_t b) {
        half_heat(u);
        const double sigma = sigma_;
        const double drift = -0.5 * sigma * sigma;
        double* __restrict v = u.data();
        const double* __restrict xi = xi_.data();
        for (std::size_t i = a; i < b; ++i) v[i] *= detail::exp_bounded(sigma * xi[i] + drift);
        half_heat(u);
        return true;
    }

    Lattice lat_;
    double dt_;
    Scheme scheme_;
    double sigma_;
    std::vector<double> xi_;
    std::vector<double> tmp_;
    std::variant<std::monostate, PeriodicHeat, AbsorbingHeat> heat_;
};

namespace detail {
/// Advances u from step k0 to the grid's final step, calling
/// on_snapshot(t, values) at each snapshot time after step k0 (and at k0
/// itself when emit_start is set).
template <NoiseSource Noise, class Visitor>
RunStatus run_steps(const GridSpec& grid, std::vector<double>& u, std::uint64_t k0, bool emit_start,
                    const Noise& noise, Visitor&& on_snapshot) {
    Stepper stepper(grid.lattice(), grid.dt, grid.scheme);
    const std::uint64_t steps = grid.step_count();
    std::size_t next = 0;
    while (next < grid.snapshot_times.size() && grid.step_of(grid.snapshot_times[next]) < k0 + (emit_start ? 0 : 1))
        ++next;
    auto emit = [&](std::uint64_t k) {
        while (next < grid.snapshot_times.size() && grid.step_of(grid.snapshot_times[next]) == k) {
            on_snapshot(static_cast<double>(k) * grid.dt, std::span<const double>(u));
            ++next;
        }
    };
    emit(k0);
    for (std::uint64_t k = k0; k < steps; ++k) {
        bool finite = stepper.step(std::span<double>(u), noise, k);
        const bool at_snapshot =
            next < grid.snapshot_times.size() && grid.step_of(grid.snapshot_times[next]) == k + 1;
        if (finite && (at_snapshot || k + 1 == steps) && grid.scheme == Scheme::splitting) {
            for (double v : u) finite &= std::isfinite(v);
        }
        if (!finite) return RunStatus::diverged;
        emit(k + 1);
    }
    return RunStatus::ok;
}
}  // namespace detail

/// Runs the grid's time loop and calls on_snapshot(t, values) at every
/// snapshot time. Stops early, returning diverged, on a non-finite value.
/// Does not validate; solve() does.
template <NoiseSource Noise, class Visitor>
RunStatus solve_visit(const GridSpec& grid, const InitialData& init, const Noise& noise, Visitor&& on_snapshot) {
    std::vector<double> u = materialize(init, grid.lattice());
    return detail::run_steps(grid, u, 0, true, noise, on_snapshot);
}

/// Full solve with stored snapshots.
template <NoiseSource Noise>
Trajectory solve(const GridSpec& grid, const InitialData& init, const Noise& noise, std::uint64_t master_seed = 0,
                 std::uint64_t stream_id = 0) {
    grid.validate().raise_if_errors();
    validate(init, grid).raise_if_errors();
    Trajectory traj{{}, grid, init, master_seed, stream_id, RunStatus::ok};
    const Lattice lat = grid.lattice();
    traj.status = solve_visit(grid, init, noise, [&](double t, std::span<const double> u) {
        traj.snapshots.push_back({t, std::vector<double>(u.begin(), u.end()), lat});
    });
    return traj;
}

inline Trajectory solve(const GridSpec& grid, const InitialData& init, const NoiseStream& stream) {
    return solve(grid, init, stream, stream.master_seed(), stream.stream_id());
}

/// Continues a trajectory from its last snapshot up to traj.grid.t_end,
/// appending the remaining snapshot times. The noise must be the source the
/// trajectory was started with; the result is then bit-identical to an
/// uninterrupted solve.
template <NoiseSource Noise>
void resume(Trajectory& traj, const Noise& noise) {
    traj.grid.validate().raise_if_errors();
    if (traj.snapshots.empty()) throw ValidationError("resume: trajectory has no snapshot to start from");
    if (traj.status != RunStatus::ok) throw ValidationError("resume: trajectory is flagged diverged");
    const LatticeField& last = traj.snapshots.back();
    if (!(last.lattice == traj.grid.lattice())) throw ValidationError("resume: snapshot lattice differs from grid");
    std::vector<double> u = last.values;
    const Lattice lat = traj.grid.lattice();
    traj.status = detail::run_steps(traj.grid, u, traj.grid.step_of(last.t), false, noise,
                                    [&](double t, std::span<const double> v) {
                                        traj.snapshots.push_back({t, std::vector<double>(v.begin(), v.end()), lat});
                                    });
}

inline void resume(Trajectory& traj) {
    resume(traj, NoiseStream(traj.master_seed, traj.stream_id));
}

/// Closed window of absolute lattice indices covered by
/// [center - half_width, center + half_width].
inline IndexRange noise_window(const GridSpec& grid, double center, double half_width) {
    if (!(2.0 * half_width >= 2.0 * grid.dx * (1.0 - 1e-12)))
        throw ValidationError("half_width: window narrower than 2 dx");
    const double lo = center - half_width;
    const double hi = center + half_width;
    const double tol = 1e-9 * grid.dx;
    if (lo < grid.x_min - tol || hi > grid.x_max + tol)
        throw ValidationError("center/half_width: window must lie inside the domain");
    return {static_cast<std::int64_t>(std::ceil(lo / grid.dx - 1e-9)),
            static_cast<std::int64_t>(std::floor(hi / grid.dx + 1e-9))};
}

/// Solve driven only by the noise inside the window around center; noise is
/// zero elsewhere. Solves with disjoint windows read disjoint noise
/// coordinates and are therefore independent.
template <NoiseSource Noise>
Trajectory localized_solve(const GridSpec& grid, const InitialData& init, const Noise& noise, double center,
                           double half_width, std::uint64_t master_seed = 0, std::uint64_t stream_id = 0) {
    const IndexRange w = noise_window(grid, center, half_width);
    return solve(grid, init, WindowedNoise<Noise>(noise, w.first, w.last), master_seed, stream_id);
}

inline Trajectory localized_solve(const GridSpec& grid, const InitialData& init, const NoiseStream& stream,
                                  double center, double half_width) {
    return localized_solve(grid, init, stream, center, half_width, stream.master_seed(), stream.stream_id());
}

namespace detail {
template <NoiseSource Noise>
LatticeField single_step(const LatticeField& field, const Noise& noise, double dt, Scheme scheme) {
    LatticeField out = field;
    Stepper stepper(field.lattice, dt, scheme);
    const auto n = static_cast<std::uint64_t>(std::llround(field.t / dt));
    stepper.step(std::span<double>(out.values), noise, n);
    out.t = field.t + dt;
    return out;
}
}  // namespace detail

/// Forward-Euler (Ito) step. Requires dt <= dx^2. The result may contain
/// non-finite values; check all_finite().
template <NoiseSource Noise>
LatticeField step_explicit(const LatticeField& field, const Noise& noise, double dt) {
    if (dt > field.lattice.dx * field.lattice.dx * (1.0 + 1e-12))
        throw ValidationError("dt: dt <= dx^2 required for explicit_euler");
    if (!field.all_finite()) throw DomainError("step_explicit: input field has non-finite values");
    return detail::single_step(field, noise, dt, Scheme::explicit_euler);
}

/// Heat step followed by the lognormal factor exp(sigma xi - sigma^2 / 2),
/// sigma = sqrt(dt / dx). Positive input gives positive output.
template <NoiseSource Noise>
LatticeField step_splitting(const LatticeField& field, const Noise& noise, double dt) {
    for (double v : field.values)
        if (!(v > 0.0)) throw DomainError("step_splitting: input values must be > 0");
    return detail::single_step(field, noise, dt, Scheme::splitting);
}

}  // namespace pam
