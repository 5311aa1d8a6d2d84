#pragma once

// Space-time point sets: valley sets of a trajectory, the stretch map, floor
// pixelation, and the synthetic benchmark sets Xi_q.
//
// Pixel sets are stored column by column (fixed first coordinate s) as
// sorted, disjoint, non-adjacent runs of the second coordinate j, so sets with
// billions of pixels but simple geometry stay small.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pam/error.hpp"
#include "pam/she/solver.hpp"

namespace pam {

struct Point {
    double t;
    double x;
    friend bool operator==(const Point&, const Point&) = default;
    friend auto operator<=>(const Point&, const Point&) = default;
};

struct Pixel {
    std::int64_t s;
    std::int64_t j;
    friend bool operator==(const Pixel&, const Pixel&) = default;
    friend auto operator<=>(const Pixel&, const Pixel&) = default;
};

/// Inclusive run j in [lo, hi].
struct Run {
    std::int64_t lo;
    std::int64_t hi;
    std::uint64_t length() const noexcept { return static_cast<std::uint64_t>(hi - lo) + 1; }
    friend bool operator==(const Run&, const Run&) = default;
};

struct Column {
    std::int64_t s;
    std::vector<Run> runs;
    friend bool operator==(const Column&, const Column&) = default;

    std::uint64_t count() const noexcept {
        std::uint64_t c = 0;
        for (const auto& r : runs) c += r.length();
        return c;
    }
    /// Number of j in [a, b] covered by the runs.
    std::uint64_t count_in(std::int64_t a, std::int64_t b) const noexcept {
        if (a > b) return 0;
        std::uint64_t c = 0;
        auto it = std::lower_bound(runs.begin(), runs.end(), a, [](const Run& r, std::int64_t v) { return r.hi < v; });
        for (; it != runs.end() && it->lo <= b; ++it) {
            const std::int64_t lo = std::max(a, it->lo), hi = std::min(b, it->hi);
            if (lo <= hi) c += static_cast<std::uint64_t>(hi - lo) + 1;
        }
        return c;
    }
    bool contains(std::int64_t j) const noexcept { return count_in(j, j) == 1; }
};

/// Provenance carried through every transformation.
struct SetMeta {
    std::string source = "unknown";
    std::optional<std::uint64_t> seed;
    double dt = 0.0;  // resolution of the source grid, 0 when not applicable
    double dx = 0.0;
    std::string pixelation;  // "floor" once pixelated, empty for raw sets
    nlohmann::json extra = nlohmann::json::object();
};

class SpaceTimeSet {
public:
    enum class Kind { real, pixel };

    SpaceTimeSet() = default;

    /// Real-coordinate set. Duplicates are removed; t > 0 is required.
    static SpaceTimeSet from_points(std::vector<Point> pts, SetMeta meta = {}) {
        for (const auto& p : pts)
            if (!(p.t > 0.0) || !std::isfinite(p.t) || !std::isfinite(p.x))
                throw ValidationError("SpaceTimeSet: points need finite coordinates with t > 0");
        std::sort(pts.begin(), pts.end());
        pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
        SpaceTimeSet s;
        s.kind_ = Kind::real;
        s.points_ = std::move(pts);
        s.meta_ = std::move(meta);
        return s;
    }

    /// Pixel set from individual pixels (deduplicated); s >= 0 required.
    static SpaceTimeSet from_pixels(std::vector<Pixel> px, SetMeta meta = {}) {
        std::sort(px.begin(), px.end());
        px.erase(std::unique(px.begin(), px.end()), px.end());
        std::vector<Column> cols;
        for (const auto& p : px) {
            if (cols.empty() || cols.back().s != p.s) cols.push_back({p.s, {}});
            auto& runs = cols.back().runs;
            if (!runs.empty() && runs.back().hi + 1 == p.j)
                runs.back().hi = p.j;
            else
                runs.push_back({p.j, p.j});
        }
        return from_columns(std::move(cols), std::move(meta));
    }

    /// Pixel set from columns; runs are normalised (sorted, merged).
    static SpaceTimeSet from_columns(std::vector<Column> cols, SetMeta meta = {}) {
        std::sort(cols.begin(), cols.end(), [](const Column& a, const Column& b) { return a.s < b.s; });
        std::vector<Column> out;
        for (auto& c : cols) {
            if (c.s < 0) throw ValidationError("SpaceTimeSet: pixel first coordinate must be >= 0");
            if (!out.empty() && out.back().s == c.s) {
                out.back().runs.insert(out.back().runs.end(), c.runs.begin(), c.runs.end());
            } else {
                out.push_back(std::move(c));
            }
        }
        for (auto& c : out) normalise(c.runs);
        std::erase_if(out, [](const Column& c) { return c.runs.empty(); });
        SpaceTimeSet s;
        s.kind_ = Kind::pixel;
        s.columns_ = std::move(out);
        s.meta_ = std::move(meta);
        return s;
    }

    Kind kind() const noexcept { return kind_; }
    bool is_pixel() const noexcept { return kind_ == Kind::pixel; }
    const std::vector<Point>& points() const noexcept { return points_; }
    const std::vector<Column>& columns() const noexcept { return columns_; }
    const SetMeta& meta() const noexcept { return meta_; }
    SetMeta& meta() noexcept { return meta_; }

    std::uint64_t size() const noexcept {
        if (kind_ == Kind::real) return points_.size();
        std::uint64_t c = 0;
        for (const auto& col : columns_) c += col.count();
        return c;
    }
    bool empty() const noexcept { return size() == 0; }

    bool contains(const Pixel& p) const noexcept {
        const Column* c = column(p.s);
        return c != nullptr && c->contains(p.j);
    }
    bool contains(const Point& p) const noexcept { return std::binary_search(points_.begin(), points_.end(), p); }

    const Column* column(std::int64_t s) const noexcept {
        auto it = std::lower_bound(columns_.begin(), columns_.end(), s,
                                   [](const Column& c, std::int64_t v) { return c.s < v; });
        return (it != columns_.end() && it->s == s) ? &*it : nullptr;
    }

    /// Pixels in [s0, s1] x [j0, j1].
    std::uint64_t count_in(std::int64_t s0, std::int64_t s1, std::int64_t j0, std::int64_t j1) const noexcept {
        if (s0 > s1 || j0 > j1) return 0;
        auto it = std::lower_bound(columns_.begin(), columns_.end(), s0,
                                   [](const Column& c, std::int64_t v) { return c.s < v; });
        std::uint64_t c = 0;
        for (; it != columns_.end() && it->s <= s1; ++it) c += it->count_in(j0, j1);
        return c;
    }

    /// Every pixel, in (s, j) order. Only sensible for modest sets.
    std::vector<Pixel> pixels() const {
        std::vector<Pixel> out;
        for (const auto& c : columns_)
            for (const auto& r : c.runs)
                for (std::int64_t j = r.lo; j <= r.hi; ++j) out.push_back({c.s, j});
        return out;
    }

    /// A ⊆ B for two sets of the same kind.
    bool subset_of(const SpaceTimeSet& other) const {
        if (kind_ != other.kind_) throw ValidationError("subset_of: sets of different kinds");
        if (kind_ == Kind::real)
            return std::includes(other.points_.begin(), other.points_.end(), points_.begin(), points_.end());
        for (const auto& c : columns_) {
            const Column* o = other.column(c.s);
            if (o == nullptr) return false;
            for (const auto& r : c.runs)
                if (o->count_in(r.lo, r.hi) != r.length()) return false;
        }
        return true;
    }

    friend bool operator==(const SpaceTimeSet& a, const SpaceTimeSet& b) {
        return a.kind_ == b.kind_ && a.points_ == b.points_ && a.columns_ == b.columns_;
    }

private:
    static void normalise(std::vector<Run>& runs) {
        std::sort(runs.begin(), runs.end(), [](const Run& a, const Run& b) { return a.lo < b.lo; });
        std::vector<Run> merged;
        for (const auto& r : runs) {
            if (r.lo > r.hi) continue;
            if (!merged.empty() && r.lo <= merged.back().hi + 1)
                merged.back().hi = std::max(merged.back().hi, r.hi);
            else
                merged.push_back(r);
        }
        runs = std::move(merged);
    }

    Kind kind_ = Kind::pixel;
    std::vector<Point> points_;
    std::vector<Column> columns_;
    SetMeta meta_;
};

struct ValleyParams {
    double gamma;
    double beta;
    void validate() const {
        if (!(gamma > 0.0)) throw ValidationError("gamma: gamma > 0 required");
        if (!(beta > 0.0)) throw ValidationError("beta: beta > 0 required");
    }
};

/// Grid nodes of one time slice with t > e and u < exp(-gamma t).
inline void append_valley_points(std::vector<Point>& out, double t, const Lattice& lat,
                                 std::span<const double> values, double gamma) {
    if (!(t > std::numbers::e)) return;
    const double threshold = std::exp(-gamma * t);
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i] < threshold) out.push_back({t, lat.x(i)});
}

/// Valley set V(gamma) restricted to the trajectory's snapshot nodes.
/// `warning` (if given) receives a message when no snapshot has t > e.
inline SpaceTimeSet valley_set(const Trajectory& tr, double gamma, std::string* warning = nullptr) {
    if (!(gamma > 0.0)) throw ValidationError("gamma: gamma > 0 required");
    std::vector<Point> pts;
    bool any = false;
    for (const auto& snap : tr.snapshots) {
        any |= snap.t > std::numbers::e;
        append_valley_points(pts, snap.t, snap.lattice, snap.values, gamma);
    }
    if (!any && warning != nullptr) *warning = "valley_set: no snapshot with t > e; result is empty";
    SetMeta meta{"valley", tr.master_seed, tr.grid.dt, tr.grid.dx, "", {}};
    meta.extra["gamma"] = gamma;
    meta.extra["stream_id"] = tr.stream_id;
    return SpaceTimeSet::from_points(std::move(pts), std::move(meta));
}

/// (t, x) -> (exp(t / beta), x).
inline SpaceTimeSet stretch(const SpaceTimeSet& set, double beta) {
    if (!(beta > 0.0)) throw ValidationError("beta: beta > 0 required");
    if (set.kind() != SpaceTimeSet::Kind::real) throw ValidationError("stretch: expects a real-coordinate set");
    std::vector<Point> pts;
    pts.reserve(set.points().size());
    for (const auto& p : set.points()) {
        const double s = std::exp(p.t / beta);
        if (!std::isfinite(s)) throw DomainError("stretch: exp(t / beta) overflows");
        pts.push_back({s, p.x});
    }
    SetMeta meta = set.meta();
    meta.extra["beta"] = beta;
    return SpaceTimeSet::from_points(std::move(pts), std::move(meta));
}

/// (t, x) -> (floor t, floor x), deduplicated. Pixel sets pass unchanged.
inline SpaceTimeSet pixelate(const SpaceTimeSet& set) {
    if (set.is_pixel()) return set;
    std::vector<Pixel> px;
    px.reserve(set.points().size());
    for (const auto& p : set.points())
        px.push_back({static_cast<std::int64_t>(std::floor(p.t)), static_cast<std::int64_t>(std::floor(p.x))});
    SetMeta meta = set.meta();
    meta.pixelation = "floor";
    return SpaceTimeSet::from_pixels(std::move(px), std::move(meta));
}

namespace detail {
/// Smallest integer j with j >= s^q, for s >= 1.
inline std::int64_t ceil_power(std::int64_t s, double q) {
    const long double v = std::pow(static_cast<long double>(s), static_cast<long double>(q));
    auto j = static_cast<std::int64_t>(std::ceil(v));
    // Exact check for rational-looking cases where pow rounds across an integer.
    const double qr = std::round(q);
    if (q == qr && qr >= 1.0 && qr <= 4.0) {
        std::int64_t p = 1;
        for (int k = 0; k < static_cast<int>(qr); ++k) p *= s;
        return p;
    }
    const double inv = 1.0 / q;
    if (std::fabs(inv - std::round(inv)) < 1e-12 && std::round(inv) <= 4.0) {
        const int m = static_cast<int>(std::round(inv));
        auto pw = [m](std::int64_t x) {
            std::int64_t p = 1;
            for (int k = 0; k < m; ++k) p *= x;
            return p;
        };
        while (j > 1 && pw(j - 1) >= s) --j;
        while (pw(j) < s) ++j;
    }
    return j;
}

/// Largest integer strictly below e^n (e^n is never an integer for n >= 1).
inline std::int64_t below_exp(double n) { return static_cast<std::int64_t>(std::floor(std::exp(n))); }
}  // namespace detail

inline constexpr std::uint64_t kDefaultPixelBudget = 1'000'000'000'000ull;

/// Integer pixels (s, j), s >= 1, j >= s^q, inside V_{n_max} =
/// [0, e^{n_max}) x [-e^{n_max}, e^{n_max}). Throws ResourceError when the
/// pixel count would exceed `budget`.
inline SpaceTimeSet xi_q(double q, int n_max, std::uint64_t budget = kDefaultPixelBudget) {
    if (!(q > 0.0)) throw ValidationError("q: q > 0 required");
    if (n_max < 1) throw ValidationError("n_max: n_max >= 1 required");
    if (n_max > 40) throw ResourceError("xi_q: n_max too large for 64-bit pixel coordinates");
    const std::int64_t top = detail::below_exp(n_max);  // s, j <= top
    std::vector<Column> cols;
    std::uint64_t total = 0;
    for (std::int64_t s = 1; s <= top; ++s) {
        const std::int64_t lo = std::max<std::int64_t>(1, detail::ceil_power(s, q));
        if (lo > top) break;  // s^q increasing: later columns are empty too
        total += static_cast<std::uint64_t>(top - lo + 1);
        if (total > budget)
            throw ResourceError("xi_q: pixel count exceeds budget of " + std::to_string(budget) +
                                " (lower n_max or raise the budget)");
        cols.push_back({s, {{lo, top}}});
    }
    SetMeta meta{"xi_q", std::nullopt, 0.0, 0.0, "exact", {}};
    meta.extra["q"] = q;
    meta.extra["n_max"] = n_max;
    return SpaceTimeSet::from_columns(std::move(cols), std::move(meta));
}

/// {(s, 0) : 1 <= s < e^{n_max}}.
inline SpaceTimeSet horizontal_line(int n_max) {
    const std::int64_t top = detail::below_exp(n_max);
    std::vector<Column> cols;
    for (std::int64_t s = 1; s <= top; ++s) cols.push_back({s, {{0, 0}}});
    SetMeta meta{"line", std::nullopt, 0.0, 0.0, "exact", {}};
    meta.extra["n_max"] = n_max;
    return SpaceTimeSet::from_columns(std::move(cols), std::move(meta));
}

/// {(s, j) : s, j >= 0} inside V_{n_max}.
inline SpaceTimeSet full_quadrant(int n_max) {
    const std::int64_t top = detail::below_exp(n_max);
    std::vector<Column> cols;
    for (std::int64_t s = 0; s <= top; ++s) cols.push_back({s, {{0, top}}});
    SetMeta meta{"quadrant", std::nullopt, 0.0, 0.0, "exact", {}};
    meta.extra["n_max"] = n_max;
    return SpaceTimeSet::from_columns(std::move(cols), std::move(meta));
}

// ---------------------------------------------------------------------------
// Set files: a "# kind=..., source=..., seed=..." header, then "t,x" (real)
// or "s,j" (pixel) rows. Pixel rows are written as runs "s,j_lo,j_hi" when
// `runs` is set, which keeps implicit sets small on disk.

inline void write_set_csv(std::ostream& os, const SpaceTimeSet& set, bool runs = false) {
    const auto& m = set.meta();
    os << "# kind=" << (set.is_pixel() ? "pixel" : "real") << ", source=" << m.source
       << ", seed=" << (m.seed ? std::to_string(*m.seed) : std::string("none")) << "\n";
    char buf[96];
    if (!set.is_pixel()) {
        os << "t,x\n";
        for (const auto& p : set.points()) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.t, p.x);
            os << buf;
        }
    } else if (runs) {
        os << "s,j_lo,j_hi\n";
        for (const auto& c : set.columns())
            for (const auto& r : c.runs) os << c.s << ',' << r.lo << ',' << r.hi << '\n';
    } else {
        os << "s,j\n";
        for (const auto& c : set.columns())
            for (const auto& r : c.runs)
                for (std::int64_t j = r.lo; j <= r.hi; ++j) os << c.s << ',' << j << '\n';
    }
}

inline nlohmann::json set_sidecar(const SpaceTimeSet& set) {
    const auto& m = set.meta();
    nlohmann::json j;
    j["kind"] = set.is_pixel() ? "pixel" : "real";
    j["source"] = m.source;
    j["seed"] = m.seed ? nlohmann::json(*m.seed) : nlohmann::json(nullptr);
    j["dt"] = m.dt;
    j["dx"] = m.dx;
    j["pixelation"] = m.pixelation;
    j["size"] = set.size();
    j["extra"] = m.extra;
    return j;
}

inline SpaceTimeSet read_set_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("# kind=", 0) != 0)
        throw FormatError("set file: missing '# kind=...' header");
    const bool pixel = line.find("kind=pixel") != std::string::npos;
    SetMeta meta;
    if (auto p = line.find("source="); p != std::string::npos) {
        auto e = line.find(',', p);
        meta.source = line.substr(p + 7, e == std::string::npos ? std::string::npos : e - p - 7);
    }
    if (auto p = line.find("seed="); p != std::string::npos) {
        const std::string v = line.substr(p + 5);
        if (v != "none") meta.seed = std::stoull(v);
    }
    if (!std::getline(is, line)) throw FormatError("set file: missing column header");
    const int ncol = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
    std::vector<Point> pts;
    std::vector<Column> cols;
    std::size_t row = 2;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        std::istringstream ls(line);
        char c1 = 0, c2 = 0;
        if (!pixel) {
            Point p{};
            if (!(ls >> p.t >> c1 >> p.x) || c1 != ',') throw FormatError("set file: bad row " + std::to_string(row));
            pts.push_back(p);
        } else if (ncol == 3) {
            std::int64_t s, lo, hi;
            if (!(ls >> s >> c1 >> lo >> c2 >> hi)) throw FormatError("set file: bad row " + std::to_string(row));
            cols.push_back({s, {{lo, hi}}});
        } else {
            std::int64_t s, j;
            if (!(ls >> s >> c1 >> j)) throw FormatError("set file: bad row " + std::to_string(row));
            cols.push_back({s, {{j, j}}});
        }
    }
    return pixel ? SpaceTimeSet::from_columns(std::move(cols), std::move(meta))
                 : SpaceTimeSet::from_points(std::move(pts), std::move(meta));
}

}  // namespace pam
