#pragma once

// Experiment runs: typed configuration, validation, execution into an output
// directory, manifests and parameter sweeps.
//
// Output protocol. A run first writes INCOMPLETE into the output directory
// and stages every data file under .staging/. Only after the experiment
// finishes are the staged files moved into place, followed by manifest.json
// (write-then-rename) and removal of the marker. A directory holding
// manifest.json therefore always describes a finished run.

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pam/config.hpp"
#include "pam/ensemble.hpp"
#include "pam/level_sets.hpp"
#include "pam/macro_hausdorff.hpp"
#include "pam/she/checkpoint.hpp"
#include "pam/she/solver.hpp"
#include "pam/tail_stats.hpp"

namespace pam {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kIncompleteMarker = "INCOMPLETE";
inline constexpr const char* kManifestName = "manifest.json";

inline const std::vector<std::string>& experiment_kinds() {
    static const std::vector<std::string> k{"simulate", "valleys", "stretch", "dim",   "tails",
                                            "moments",  "convtest", "fkg",    "proxy", "xi-gen"};
    return k;
}

/// Raised when a run started but could not finish; the output directory keeps
/// its INCOMPLETE marker.
class RunAborted : public Error {
public:
    using Error::Error;
};

struct ExperimentConfig {
    json doc;  // parsed configuration with overrides applied
    std::string kind;
    GridSpec grid;
    InitialData init = FlatInit{1.0};
    std::uint64_t master_seed = 0;
    std::uint64_t runs = 1;
    unsigned workers = 1;
    std::string out = "out";

    /// Digest of the configuration without run.workers and run.out, which
    /// do not change results.
    std::string hash() const { return config::fnv1a_hex(hashed().dump()); }

    json hashed() const {
        json h = doc;
        if (h.contains("run")) {
            h["run"].erase("workers");
            h["run"].erase("out");
        }
        return h;
    }

    EnsembleSpec ensemble() const {
        EnsembleSpec e;
        e.grid = grid;
        e.init = init;
        e.master_seed = master_seed;
        e.runs = runs;
        e.workers = workers;
        return e;
    }
};

namespace detail {

inline GridSpec grid_from(const json& d) {
    GridSpec g;
    g.dx = config::get_double(d, "grid.dx", g.dx);
    g.dt = config::get_double(d, "grid.dt", g.dt);
    g.x_min = config::get_double(d, "grid.x_min", g.x_min);
    g.x_max = config::get_double(d, "grid.x_max", g.x_max);
    g.t_end = config::get_double(d, "grid.t_end", g.t_end);
    g.boundary = parse_boundary(config::get_string(d, "grid.boundary", "periodic"));
    g.scheme = parse_scheme(config::get_string(d, "grid.scheme", "splitting"));
    if (config::has(d, "grid.snapshot_times")) g.snapshot_times = config::get_doubles(d, "grid.snapshot_times");
    if (config::has(d, "grid.snapshot_every")) {
        if (config::has(d, "grid.snapshot_times"))
            throw ValidationError("grid.snapshot_every: give snapshot_times or snapshot_every, not both");
        const double every = config::get_double(d, "grid.snapshot_every");
        if (!(every > 0.0)) throw ValidationError("grid.snapshot_every: snapshot_every > 0 required");
        const auto k = static_cast<std::uint64_t>(std::llround(every / g.dt));
        if (k == 0 || std::fabs(static_cast<double>(k) * g.dt - every) > 1e-9 * every)
            throw ValidationError("grid.snapshot_every: must be a multiple of dt");
        for (std::uint64_t s = k; s <= g.step_count(); s += k) g.snapshot_times.push_back(static_cast<double>(s) * g.dt);
    }
    if (g.snapshot_times.empty()) g.snapshot_times = {g.t_end};
    return g;
}

inline InitialData init_from(const json& d, const GridSpec& g) {
    const std::string kind = config::get_string(d, "init.kind", "flat");
    if (kind == "flat") return FlatInit{config::get_double(d, "init.c", 1.0)};
    if (kind == "dirac") return DiracInit{config::get_double(d, "init.x0", 0.0)};
    if (kind == "sampled") {
        if (config::has(d, "init.values")) return SampledInit{config::get_doubles(d, "init.values")};
        const std::string path = config::get_string(d, "init.file");
        std::ifstream f(path);
        if (!f) throw ValidationError("init.file: cannot open '" + path + "'");
        std::vector<double> v;
        for (double x; f >> x;) v.push_back(x);
        if (v.size() != g.site_count())
            throw ValidationError("init.file: expected " + std::to_string(g.site_count()) + " values, got " +
                                  std::to_string(v.size()));
        return SampledInit{std::move(v)};
    }
    throw ValidationError("init.kind: expected flat|dirac|sampled, got '" + kind + "'");
}

/// Splits "key: rule" messages into an Issue.
inline Issue issue_of(const std::string& msg) {
    const auto p = msg.find(": ");
    if (p == std::string::npos) return {"config", msg};
    return {msg.substr(0, p), msg.substr(p + 2)};
}

template <class F>
void collect(Diagnostics& d, F&& check) {
    try {
        check();
    } catch (const ValidationError& e) {
        // Grid and init diagnostics join several "key: rule" items with "; ".
        std::string msg = e.what();
        std::size_t start = 0;
        while (true) {
            const auto semi = msg.find("; ", start);
            d.errors.push_back(issue_of(msg.substr(start, semi - start)));
            if (semi == std::string::npos) break;
            start = semi + 2;
        }
    }
}

}  // namespace detail

/// Typed view of a parsed configuration. Throws ValidationError on the first
/// malformed key; use validate() for the full list.
inline ExperimentConfig make_config(json doc) {
    ExperimentConfig c;
    c.kind = config::get_string(doc, "run.kind");
    if (std::find(experiment_kinds().begin(), experiment_kinds().end(), c.kind) == experiment_kinds().end())
        throw ValidationError("run.kind: unknown experiment '" + c.kind + "'");
    c.grid = detail::grid_from(doc);
    c.init = detail::init_from(doc, c.grid);
    c.master_seed = config::get_u64(doc, "run.master_seed", 0);
    c.runs = config::get_u64(doc, "run.N", 1);
    const std::uint64_t w = config::has(doc, "run.workers") ? config::get_u64(doc, "run.workers") : default_workers();
    if (w == 0) throw ValidationError("run.workers: at least one worker required");
    c.workers = static_cast<unsigned>(w);
    c.out = config::get_string(doc, "run.out", "out");
    c.doc = std::move(doc);
    return c;
}

// ---------------------------------------------------------------------------
// Experiment parameters

namespace detail {

inline EventSpec event_from(const json& d) {
    EventSpec e;
    e.kind = parse_event_kind(config::get_string(d, "tails.event"));
    for (const char* k : {"gamma", "s", "t", "x", "nu", "M", "window", "a", "b", "eps", "l1", "l2"}) {
        const std::string path = std::string("tails.") + k;
        if (config::has(d, path)) e.field(k) = config::get_double(d, path);
    }
    return e;
}

inline FkgSpec fkg_from(const json& d) {
    FkgSpec f;
    f.t = config::get_double(d, "fkg.t", f.t);
    f.a = config::get_double(d, "fkg.a", f.a);
    f.b = config::get_double(d, "fkg.b", f.b);
    f.c = config::get_double(d, "fkg.c", f.c);
    f.d = config::get_double(d, "fkg.d", f.d);
    f.nu = config::get_double(d, "fkg.nu", f.nu);
    if (config::has(d, "fkg.s")) f.s = config::get_double(d, "fkg.s");
    f.pilot_runs = config::get_u64(d, "fkg.pilot_runs", f.pilot_runs);
    return f;
}

inline SpaceTimeSet read_set_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("set: cannot open '" + path + "'");
    return read_set_csv(f);
}

inline SpaceTimeSet synthetic_set(const json& d, const std::string& prefix, int n_max) {
    const std::string form = config::get_string(d, prefix + ".form", "xi");
    if (form == "xi") {
        const double q = config::get_double(d, prefix + ".q");
        if (!(q > 0.0)) throw ValidationError(prefix + ".q: q > 0 required");
        return xi_q(q, n_max);
    }
    if (form == "line") return horizontal_line(n_max);
    if (form == "quadrant") return full_quadrant(n_max);
    throw ValidationError(prefix + ".form: expected xi|line|quadrant, got '" + form + "'");
}

inline std::vector<int> ints(const std::vector<double>& v, const std::string& key) {
    std::vector<int> out;
    for (double x : v) {
        if (x != std::floor(x)) throw ValidationError(key + ": integers required");
        out.push_back(static_cast<int>(x));
    }
    return out;
}

/// Kind-specific parameter checks that need no simulation.
inline void check_kind(const ExperimentConfig& c) {
    const json& d = c.doc;
    const EnsembleSpec ens = c.ensemble();
    if (c.kind == "simulate") {
        if (c.runs == 0) throw ValidationError("run.N: N > 0 required");
    } else if (c.kind == "valleys") {
        const auto gammas = config::get_doubles(d, "valleys.gamma");
        for (double g : gammas)
            if (!(g > 0.0)) throw ValidationError("valleys.gamma: gamma > 0 required");
        if (!config::has(d, "valleys.trajectory") && c.grid.t_end <= std::numbers::e)
            throw ValidationError("grid.t_end: valleys need t_end > e");
    } else if (c.kind == "stretch") {
        ValleyParams{1.0, config::get_double(d, "stretch.beta")}.validate();
        config::get_string(d, "stretch.set");
    } else if (c.kind == "dim") {
        const auto n_lo = config::get_int(d, "dim.n_lo", 1), n_hi = config::get_int(d, "dim.n_hi", 12);
        if (n_lo < 1 || n_hi < n_lo + 3) throw ValidationError("dim.n_hi: need 1 <= n_lo and at least 4 shells");
        if (!config::has(d, "dim.set") && !config::has(d, "dim.form"))
            throw ValidationError("dim.set: give a set file or a synthetic dim.form");
        parse_strategy(config::get_string(d, "dim.strategy", "single_scale"));
        if (config::has(d, "dim.rho")) {
            auto rho = config::get_doubles(d, "dim.rho");
            if (rho.empty() || *std::min_element(rho.begin(), rho.end()) > 0.0 ||
                *std::max_element(rho.begin(), rho.end()) < 2.0)
                throw ValidationError("dim.rho: grid must span [0, 2]");
        }
    } else if (c.kind == "tails") {
        ens.validate();
        if (c.runs < 100) throw ValidationError("run.N: ensemble size N >= 100 required for tail estimates");
        const EventSpec e = event_from(d);
        const std::string param = config::get_string(d, "tails.sweep");
        const auto values = config::get_doubles(d, "tails.values");
        if (values.empty()) throw ValidationError("tails.values: empty value list");
        for (double v : values) {
            try {
                e.with(param, v).validate(ens);
            } catch (const ValidationError& err) {
                // Report event fields under their config keys.
                std::string msg = err.what();
                if (msg.rfind("event.", 0) == 0) msg = "tails." + msg.substr(6);
                throw ValidationError(msg);
            }
        }
    } else if (c.kind == "moments") {
        ens.validate();
        const auto ks = ints(config::get_doubles(d, "moments.k"), "moments.k");
        for (int k : ks)
            if (k < 1 || (k > 3 && !config::get_bool(d, "moments.allow_high_k", false)))
                throw ValidationError("moments.k: 1 <= k <= 3 required (set allow_high_k to override)");
        if (config::get_doubles(d, "moments.t").size() < 2) throw ValidationError("moments.t: at least two times");
        const auto* f = std::get_if<FlatInit>(&c.init);
        if (f == nullptr || f->c != 1.0) throw ValidationError("init.kind: moments need flat data with c = 1");
    } else if (c.kind == "convtest") {
        ens.validate();
        if (!(config::get_double(d, "convtest.t", 1.0) >= 0.5)) throw ValidationError("convtest.t: t >= 0.5 required");
        if (std::holds_alternative<DiracInit>(c.init))
            throw ValidationError("init.kind: convtest needs bounded positive data");
    } else if (c.kind == "fkg") {
        ens.validate();
        const FkgSpec f = fkg_from(d);
        if (!(f.nu > 0.0 && f.nu < 1.0)) throw ValidationError("fkg.nu: nu in (0, 1) required");
        if (!(f.b < f.c || f.d < f.a)) throw ValidationError("fkg.c: intervals [a, b] and [c, d] must be disjoint");
        if (!std::holds_alternative<DiracInit>(c.init)) throw ValidationError("init.kind: fkg needs dirac data");
    } else if (c.kind == "proxy") {
        ens.validate();
        noise_window(c.grid, config::get_double(d, "proxy.center", 0.0), config::get_double(d, "proxy.half_width"));
    } else if (c.kind == "xi-gen") {
        const auto n_max = config::get_int(d, "xi.n_max", 8);
        if (n_max < 1) throw ValidationError("xi.n_max: n_max >= 1 required");
        if (config::get_string(d, "xi.form", "xi") == "xi" && !(config::get_double(d, "xi.q") > 0.0))
            throw ValidationError("xi.q: q > 0 required");
    }
}

}  // namespace detail

/// Every violated rule with the offending key; warnings separately.
inline Diagnostics validate_config(const json& doc) {
    Diagnostics d;
    ExperimentConfig c;
    bool typed = false;
    detail::collect(d, [&] {
        c = make_config(doc);
        typed = true;
    });
    if (!typed) return d;
    const Diagnostics g = c.grid.validate();
    d.errors.insert(d.errors.end(), g.errors.begin(), g.errors.end());
    d.warnings.insert(d.warnings.end(), g.warnings.begin(), g.warnings.end());
    if (g.ok()) {
        const Diagnostics i = validate(c.init, c.grid);
        d.errors.insert(d.errors.end(), i.errors.begin(), i.errors.end());
    }
    detail::collect(d, [&] { detail::check_kind(c); });
    // Kind checks may re-report grid rules.
    std::vector<Issue> unique;
    for (const auto& e : d.errors)
        if (std::none_of(unique.begin(), unique.end(), [&](const Issue& u) { return u.key == e.key && u.rule == e.rule; }))
            unique.push_back(e);
    d.errors = std::move(unique);
    if (config::has(doc, "sweep")) {
        detail::collect(d, [&] {
            const auto values = config::get_doubles(doc, "sweep.values");
            if (values.empty()) throw ValidationError("sweep.values: empty value list");
        });
    }
    return d;
}

// ---------------------------------------------------------------------------
// Output staging

class OutputDir {
public:
    OutputDir(fs::path root, std::string config_hash) : root_(std::move(root)), hash_(std::move(config_hash)) {}

    const fs::path& root() const { return root_; }
    const std::string& config_hash() const { return hash_; }
    fs::path staging() const { return root_ / ".staging"; }

    void begin() {
        fs::create_directories(root_);
        write_atomic(root_ / kIncompleteMarker, json{{"config_hash", hash_}, {"started", now()}}.dump(2) + "\n");
        started_ = now();
        // A stale manifest would vouch for files this run may replace.
        fs::remove(root_ / kManifestName);
        fs::remove_all(staging());
        fs::create_directories(staging());
    }

    /// Stages a data file (relative path).
    void put(const std::string& rel, const std::string& bytes) {
        const fs::path p = staging() / rel;
        fs::create_directories(p.parent_path());
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        f << bytes;
        if (!f) throw Error("output: cannot write " + p.string());
    }

    void put_json(const std::string& rel, json j) {
        j["config_hash"] = hash_;
        put(rel, j.dump(2) + "\n");
    }

    /// CSV with a leading "# config_hash=..." comment line.
    void put_csv(const std::string& rel, const std::string& body) { put(rel, "# config_hash=" + hash_ + "\n" + body); }

    /// Moves staged files into place and writes the manifest.
    json commit(json manifest) {
        json files = json::array();
        std::vector<fs::path> staged;
        for (const auto& e : fs::recursive_directory_iterator(staging()))
            if (e.is_regular_file()) staged.push_back(e.path());
        std::sort(staged.begin(), staged.end());
        for (const auto& p : staged) {
            std::ifstream f(p, std::ios::binary);
            std::ostringstream ss;
            ss << f.rdbuf();
            const std::string bytes = ss.str();
            files.push_back({{"path", fs::relative(p, staging()).generic_string()},
                             {"bytes", bytes.size()},
                             {"fnv1a64", config::fnv1a_hex(bytes)}});
        }
        for (const auto& p : staged) {
            const fs::path dst = root_ / fs::relative(p, staging());
            fs::create_directories(dst.parent_path());
            fs::rename(p, dst);
        }
        fs::remove_all(staging());
        manifest["config_hash"] = hash_;
        manifest["tool_version"] = kToolVersion;
        manifest["started"] = started_;
        manifest["finished"] = now();
        manifest["complete"] = true;
        manifest["files"] = std::move(files);
        write_atomic(root_ / kManifestName, manifest.dump(2) + "\n");
        fs::remove(root_ / kIncompleteMarker);
        return manifest;
    }

    /// Leaves the marker with the failure reason and drops staged files.
    void abort(const std::string& reason) noexcept {
        try {
            fs::remove_all(staging());
            write_atomic(root_ / kIncompleteMarker,
                         json{{"config_hash", hash_}, {"started", started_}, {"error", reason}}.dump(2) + "\n");
        } catch (...) {
        }
    }

    static void write_atomic(const fs::path& p, const std::string& bytes) {
        const fs::path tmp = p.string() + ".tmp";
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            f << bytes;
            f.flush();
            if (!f) throw Error("output: cannot write " + tmp.string());
        }
        fs::rename(tmp, p);
    }

    static std::string now() {
        const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

private:
    fs::path root_;
    std::string hash_;
    std::string started_;
};

// ---------------------------------------------------------------------------
// Experiments. Each writes its files into `out` (relative to the staging
// root, under `prefix`) and returns a flat summary of scalars plus run
// status counts.

struct ExperimentResult {
    json summary = json::object();
    std::uint64_t runs_ok = 0;
    std::uint64_t runs_diverged = 0;
    std::vector<std::uint64_t> diverged_ids;
};

namespace detail {

inline std::string csv_of(const std::function<void(std::ostream&)>& w) {
    std::ostringstream os;
    w(os);
    return os.str();
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline Trajectory load_trajectory(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("trajectory: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return restore(bytes);
}

inline json occupancy(const SpaceTimeSet& set, int n_max) {
    json occ = json::object();
    for (int n = 1; n <= n_max; ++n) occ["shell_" + std::to_string(n)] = shell_clip(set, n).size();
    return occ;
}

inline int shells_for(double extent) { return std::max(1, static_cast<int>(std::ceil(std::log(std::max(extent, 1.0))))); }

inline ExperimentResult run_simulate(const ExperimentConfig& c, OutputDir& out, const std::string& prefix) {
    const bool csv = config::get_bool(c.doc, "simulate.csv", false);
    ExperimentResult r;
    std::vector<RunStatus> status(c.runs);
    // Trajectories are written one at a time to bound memory.
    for (std::uint64_t s = 0; s < c.runs; ++s) {
        const Trajectory tr = solve(c.grid, c.init, NoiseStream(c.master_seed, s), c.master_seed, s);
        status[s] = tr.status;
        const auto bytes = checkpoint(tr);
        char name[64];
        std::snprintf(name, sizeof name, "traj_%06llu", static_cast<unsigned long long>(s));
        out.put(prefix + name + ".ckpt", std::string(bytes.begin(), bytes.end()));
        if (csv) out.put_csv(prefix + name + ".csv", csv_of([&](std::ostream& os) { write_csv(os, tr); }));
        if (tr.status == RunStatus::ok) {
            ++r.runs_ok;
        } else {
            ++r.runs_diverged;
            r.diverged_ids.push_back(s);
        }
    }
    r.summary = {{"ok", r.runs_ok}, {"diverged", r.runs_diverged}};
    return r;
}

inline Trajectory valley_trajectory(const ExperimentConfig& c) {
    if (config::has(c.doc, "valleys.trajectory")) return load_trajectory(config::get_string(c.doc, "valleys.trajectory"));
    const std::uint64_t stream = config::get_u64(c.doc, "valleys.stream", 0);
    return solve(c.grid, c.init, NoiseStream(c.master_seed, stream), c.master_seed, stream);
}

inline ExperimentResult run_valleys(const ExperimentConfig& c, OutputDir& out, const std::string& prefix,
                                    const Trajectory* shared = nullptr) {
    ExperimentResult r;
    const Trajectory tr = shared != nullptr ? *shared : valley_trajectory(c);
    if (tr.status != RunStatus::ok) {
        r.runs_diverged = 1;
        r.diverged_ids.push_back(tr.stream_id);
        throw DomainError("valleys: trajectory diverged");
    }
    r.runs_ok = 1;
    const auto gammas = config::get_doubles(c.doc, "valleys.gamma");
    double extent = tr.grid.t_end;
    for (const auto& s : tr.snapshots) extent = std::max({extent, -s.lattice.x_min, s.lattice.x_max()});
    const int n_max = shells_for(extent);
    json rows = json::array();
    std::string occ_csv = "gamma,shell,points\n";
    for (std::size_t k = 0; k < gammas.size(); ++k) {
        std::string warning;
        const SpaceTimeSet v = valley_set(tr, gammas[k], &warning);
        const std::string stem = gammas.size() == 1 ? "valley" : "valley_" + std::to_string(k);
        out.put(prefix + stem + ".csv", csv_of([&](std::ostream& os) { write_set_csv(os, v); }));
        out.put_json(prefix + stem + ".json", set_sidecar(v));
        const json occ = occupancy(v, n_max);
        for (int n = 1; n <= n_max; ++n)
            occ_csv += fmt(gammas[k]) + "," + std::to_string(n) + "," +
                       std::to_string(occ["shell_" + std::to_string(n)].get<std::uint64_t>()) + "\n";
        json row = {{"gamma", gammas[k]}, {"points", v.size()}, {"occupancy", occ}};
        if (!warning.empty()) row["warning"] = warning;
        rows.push_back(row);
        if (k == 0) {
            r.summary["points"] = v.size();
            for (auto& [key, val] : occ.items()) r.summary[key] = val;
        }
    }
    out.put_csv(prefix + "occupancy.csv", occ_csv);
    out.put_json(prefix + "valleys.json", {{"seed", tr.master_seed}, {"stream_id", tr.stream_id}, {"sets", rows}});
    return r;
}

inline ExperimentResult run_stretch(const ExperimentConfig& c, OutputDir& out, const std::string& prefix) {
    const SpaceTimeSet in = read_set_file(config::get_string(c.doc, "stretch.set"));
    const SpaceTimeSet s = stretch(in, config::get_double(c.doc, "stretch.beta"));
    const bool pix = config::get_bool(c.doc, "stretch.pixelate", false);
    const SpaceTimeSet o = pix ? pixelate(s) : s;
    out.put(prefix + "stretched.csv", csv_of([&](std::ostream& os) { write_set_csv(os, o, pix); }));
    out.put_json(prefix + "stretched.json", set_sidecar(o));
    ExperimentResult r;
    r.summary = {{"points", o.size()}};
    return r;
}

inline ExperimentResult run_dim(const ExperimentConfig& c, OutputDir& out, const std::string& prefix) {
    const int n_lo = static_cast<int>(config::get_int(c.doc, "dim.n_lo", 1));
    const int n_hi = static_cast<int>(config::get_int(c.doc, "dim.n_hi", 12));
    const SpaceTimeSet set = config::has(c.doc, "dim.set") ? read_set_file(config::get_string(c.doc, "dim.set"))
                                                           : synthetic_set(c.doc, "dim", n_hi);
    const auto rho = config::get_doubles(c.doc, "dim.rho", default_rho_grid());
    const auto strategy = parse_strategy(config::get_string(c.doc, "dim.strategy", "single_scale"));
    const auto est = dimension_estimate(set, rho, n_lo, n_hi, strategy, c.workers);
    const auto table = content_table(set, n_lo, n_hi, rho, strategy, std::nullopt, c.workers);
    out.put_csv(prefix + "content.csv", csv_of([&](std::ostream& os) { write_content_csv(os, table); }));
    out.put_json(prefix + "dimension.json", to_json(est));
    ExperimentResult r;
    r.summary = {{"defined", est.defined},
                 {"rho_star", est.defined ? json(est.rho_star) : json(nullptr)},
                 {"band_lo", est.defined ? json(est.band_lo) : json(nullptr)},
                 {"band_hi", est.defined ? json(est.band_hi) : json(nullptr)}};
    return r;
}

inline ExperimentResult run_tails(const ExperimentConfig& c, OutputDir& out, const std::string& prefix) {
    const EventSpec e = event_from(c.doc);
    const std::string param = config::get_string(c.doc, "tails.sweep");
    const auto values = config::get_doubles(c.doc, "tails.values");
    const TailCurve curve = estimate_tail(c.ensemble(), e, param, values);
    json j = to_json(curve);
    ExperimentResult r;
    if (config::get_bool(c.doc, "tails.fit", false)) {
        try {
            const auto f = fit_exponent(curve);
            j["fit"] = to_json(f);
            r.summary["alpha"] = f.alpha;
            r.summary["c"] = f.c;
        } catch (const ValidationError& err) {
            j["fit_error"] = err.what();
        }
    }
    out.put_csv(prefix + "tail.csv", csv_of([&](std::ostream& os) { write_tail_csv(os, curve); }));
    out.put_json(prefix + "tail.json", j);
    for (std::size_t k = 0; k < curve.rows.size(); ++k) r.summary["p_hat_" + std::to_string(k)] = curve.rows[k].p;
    r.runs_ok = c.runs - curve.censored;
    r.runs_diverged = curve.censored;
    return r;
}

inline ExperimentResult run_moments(const ExperimentConfig& c, OutputDir& out, const std::string& prefix) {
    const auto ks = ints(config::get_doubles(c.doc, "moments.k"), "moments.k");
    const auto ts = config::get_doubles(c.doc, "moments.t");
    MomentOptions opt;
    opt.bootstrap = config::get_u64(c.doc, "moments.bootstrap", opt.bootstrap);
    opt.allow_high_k = config::get_bool(c.doc, "moments.allow_high_k", false);
    const auto reps = moment_lyapunov(ks, ts, c.ensemble(), opt);
    json j = json::array();
    std::string csv = "k,t,mean,stderr,log_mean,kept,single_site_ratio,effective_samples\n";
    ExperimentResult r;
    for (const auto& m : reps) {
        j.push_back(to_json(m));
        for (const auto& p : m.points)
            csv += std::to_string(m.k) + "," + fmt(p.t) + "," + fmt(p.mean) + "," + fmt(p.se) + "," + fmt(p.log_mean) +
                   "," + (p.kept ? "1" : "0") + "," + fmt(p.site_ratio) + "," + fmt(p.n_eff) + "\n";
        r.summary["slope_k" + std::to_string(m.k)] = m.slope;
        r.runs_ok = m.runs;
        r.runs_diverged = m.censored;
    }
    out.put_csv(prefix + "moments.csv", csv);
    out.put_json(prefix + "moments.json", {{"reports", j}});
    return r;
}

inline ExperimentResult run_convtest(const ExperimentConfig& c, OutputDir& out, const std::string& prefix) {
    const double t = config::get_double(c.doc, "convtest.t", 1.0);
    const double x = config::get_double(c.doc, "convtest.x", 0.0);
    const std::uint64_t reps = config::get_u64(c.doc, "convtest.repetitions", 1);
    const double alpha = config::get_double(c.doc, "convtest.alpha", 0.01);
    json j = json::array();
    ExperimentResult r;
    std::uint64_t passed = 0;
    double p_min = 1.0;
    for (std::uint64_t k = 0; k < reps; ++k) {
        EnsembleSpec ens = c.ensemble();
        ens.master_seed = hash_combine(c.master_seed, k);
        const auto rep = convolution_test(ens, t, x);
        json o = to_json(rep);
        o["repetition"] = k;
        o["seed"] = ens.master_seed;
        j.push_back(o);
        passed += rep.ks.p_value > alpha;
        p_min = std::min(p_min, rep.ks.p_value);
        r.runs_diverged += rep.censored;
        r.runs_ok += 2 * c.runs - rep.censored;
    }
    out.put_json(prefix + "convtest.json", {{"t", t}, {"x", x}, {"alpha", alpha}, {"repetitions", j}});
    r.summary = {{"passed", passed}, {"repetitions", reps}, {"p_min", p_min}};
    return r;
}

inline ExperimentResult run_fkg(const ExperimentConfig& c, OutputDir& out, const std::string& prefix) {
    const auto rep = fkg_test(c.ensemble(), fkg_from(c.doc));
    out.put_json(prefix + "fkg.json", to_json(rep));
    ExperimentResult r;
    r.summary = {{"diff", rep.diff}, {"stderr", rep.se}, {"holds", rep.holds}, {"inconclusive", rep.inconclusive}};
    r.runs_ok = rep.runs;
    r.runs_diverged = rep.censored;
    return r;
}

/// Full solve against the window-truncated solve on the same noise, compared
/// at the window centre at t_end.
inline ExperimentResult run_proxy(const ExperimentConfig& c, OutputDir& out, const std::string& prefix) {
    const double center = config::get_double(c.doc, "proxy.center", 0.0);
    const double half = config::get_double(c.doc, "proxy.half_width");
    GridSpec g = c.grid;
    g.snapshot_times = {g.t_end};
    const std::size_t site = g.lattice().nearest(center);
    const IndexRange w = noise_window(g, center, half);
    struct Pair {
        double full, local;
    };
    const auto res = parallel_map(c.runs, c.workers, [&](std::uint64_t s) -> std::optional<Pair> {
        const NoiseStream ns(c.master_seed, s);
        double a = 0, b = 0;
        const auto st1 = solve_visit(g, c.init, ns, [&](double, std::span<const double> u) { a = u[site]; });
        const auto st2 = solve_visit(g, c.init, WindowedNoise<NoiseStream>(ns, w.first, w.last),
                                     [&](double, std::span<const double> u) { b = u[site]; });
        if (st1 != RunStatus::ok || st2 != RunStatus::ok) return std::nullopt;
        return Pair{a, b};
    });
    ExperimentResult r;
    std::string csv = "run,u_full,u_local,log_ratio\n";
    double sum = 0.0, worst = 0.0;
    for (std::uint64_t s = 0; s < res.size(); ++s) {
        if (!res[s]) {
            ++r.runs_diverged;
            r.diverged_ids.push_back(s);
            continue;
        }
        ++r.runs_ok;
        const double lr = std::log(res[s]->local / res[s]->full);
        sum += std::fabs(lr);
        worst = std::max(worst, std::fabs(lr));
        csv += std::to_string(s) + "," + fmt(res[s]->full) + "," + fmt(res[s]->local) + "," + fmt(lr) + "\n";
    }
    const double mean = r.runs_ok ? sum / static_cast<double>(r.runs_ok) : 0.0;
    out.put_csv(prefix + "proxy.csv", csv);
    out.put_json(prefix + "proxy.json", {{"center", center},
                                         {"half_width", half},
                                         {"t", g.t_end},
                                         {"mean_abs_log_ratio", mean},
                                         {"max_abs_log_ratio", worst},
                                         {"runs", r.runs_ok}});
    r.summary = {{"mean_abs_log_ratio", mean}, {"max_abs_log_ratio", worst}};
    return r;
}

inline ExperimentResult run_xi(const ExperimentConfig& c, OutputDir& out, const std::string& prefix) {
    const int n_max = static_cast<int>(config::get_int(c.doc, "xi.n_max", 8));
    const SpaceTimeSet s = synthetic_set(c.doc, "xi", n_max);
    out.put(prefix + "set.csv", csv_of([&](std::ostream& os) { write_set_csv(os, s, true); }));
    out.put_json(prefix + "set.json", set_sidecar(s));
    ExperimentResult r;
    r.summary = {{"pixels", s.size()}};
    return r;
}

inline ExperimentResult run_kind(const ExperimentConfig& c, OutputDir& out, const std::string& prefix,
                                 const Trajectory* shared = nullptr) {
    if (c.kind == "simulate") return run_simulate(c, out, prefix);
    if (c.kind == "valleys") return run_valleys(c, out, prefix, shared);
    if (c.kind == "stretch") return run_stretch(c, out, prefix);
    if (c.kind == "dim") return run_dim(c, out, prefix);
    if (c.kind == "tails") return run_tails(c, out, prefix);
    if (c.kind == "moments") return run_moments(c, out, prefix);
    if (c.kind == "convtest") return run_convtest(c, out, prefix);
    if (c.kind == "fkg") return run_fkg(c, out, prefix);
    if (c.kind == "proxy") return run_proxy(c, out, prefix);
    if (c.kind == "xi-gen") return run_xi(c, out, prefix);
    throw ValidationError("run.kind: unknown experiment '" + c.kind + "'");
}

/// Parameters a sweep may vary, per experiment kind.
inline const std::map<std::string, std::vector<std::string>>& sweepable() {
    static const std::map<std::string, std::vector<std::string>> m{
        {"simulate", {"grid.dx", "grid.dt", "grid.t_end", "init.c", "run.N"}},
        {"valleys", {"valleys.gamma", "grid.t_end", "grid.dx"}},
        {"stretch", {"stretch.beta"}},
        {"dim", {"dim.n_lo", "dim.n_hi", "dim.q"}},
        {"tails",
         {"tails.gamma", "tails.s", "tails.t", "tails.x", "tails.nu", "tails.M", "tails.window", "tails.a", "tails.b",
          "tails.eps", "tails.l1", "tails.l2", "run.N", "grid.dx"}},
        {"moments", {"grid.dx", "grid.dt", "run.N"}},
        {"convtest", {"convtest.t", "grid.dx", "grid.dt", "run.N"}},
        {"fkg", {"fkg.s", "fkg.nu", "fkg.t", "fkg.a", "fkg.b", "fkg.c", "fkg.d", "run.N"}},
        {"proxy", {"proxy.half_width", "proxy.center", "grid.t_end"}},
        {"xi-gen", {"xi.q", "xi.n_max"}}};
    return m;
}

inline json with_value(json doc, const std::string& param, double v) {
    json& slot = config::ensure(doc, param);
    if (param == "run.N" || param == "dim.n_lo" || param == "dim.n_hi" || param == "xi.n_max") {
        if (v != std::floor(v) || v < 0) throw ValidationError("sweep.values: " + param + " takes integers");
        slot = static_cast<std::uint64_t>(v);
    } else {
        slot = v;
    }
    return doc;
}

}  // namespace detail

struct RunReport {
    json manifest;
    fs::path out;
};

/// Runs a validated configuration into c.out. A [sweep] section (param,
/// values) runs one sub-experiment per value under sub_<k>/ with master seed
/// hash(master_seed, k) and aggregates the summaries in sweep.csv. Valley
/// sweeps over gamma read one trajectory (simulated from master_seed and
/// saved as trajectory.ckpt) so the sets are nested.
inline RunReport run(const ExperimentConfig& c) {
    validate_config(c.doc).raise_if_errors();
    OutputDir out(c.out, c.hash());
    out.begin();
    try {
        json manifest{{"kind", c.kind}, {"master_seed", c.master_seed}, {"N", c.runs}};
        std::uint64_t ok = 0, diverged = 0;
        json diverged_ids = json::array();
        if (config::has(c.doc, "sweep")) {
            const std::string param = config::get_string(c.doc, "sweep.param");
            const auto& allowed = detail::sweepable().at(c.kind);
            if (std::find(allowed.begin(), allowed.end(), param) == allowed.end())
                throw ValidationError("sweep.param: '" + param + "' is not sweepable for " + c.kind);
            const auto values = config::get_doubles(c.doc, "sweep.values");
            std::optional<Trajectory> shared;
            if (c.kind == "valleys" && param == "valleys.gamma") {
                shared = detail::valley_trajectory(c);
                if (!config::has(c.doc, "valleys.trajectory")) {
                    const auto bytes = checkpoint(*shared);
                    out.put("trajectory.ckpt", std::string(bytes.begin(), bytes.end()));
                }
            }
            std::vector<std::string> keys;
            std::vector<json> rows;
            for (std::size_t k = 0; k < values.size(); ++k) {
                json doc = detail::with_value(c.doc, param, values[k]);
                doc.erase("sweep");
                const std::uint64_t seed = hash_combine(c.master_seed, k);
                doc["run"]["master_seed"] = seed;
                ExperimentConfig sub = make_config(doc);
                sub.workers = c.workers;
                validate_config(sub.doc).raise_if_errors();
                char prefix[32];
                std::snprintf(prefix, sizeof prefix, "sub_%03zu/", k);
                const auto res = detail::run_kind(sub, out, prefix, shared ? &*shared : nullptr);
                out.put_json(std::string(prefix) + "config.json", sub.hashed());
                ok += res.runs_ok;
                diverged += res.runs_diverged;
                for (auto id : res.diverged_ids) diverged_ids.push_back({{"sub", k}, {"stream_id", id}});
                for (auto& [key, v] : res.summary.items())
                    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
                rows.push_back({{"index", k}, {"value", values[k]}, {"seed", seed}, {"summary", res.summary}});
            }
            std::string csv = "index," + param + ",seed";
            for (const auto& k : keys) csv += "," + k;
            csv += "\n";
            for (const auto& r : rows) {
                csv += std::to_string(r["index"].get<std::size_t>()) + "," + detail::fmt(r["value"].get<double>()) + "," +
                       std::to_string(r["seed"].get<std::uint64_t>());
                for (const auto& k : keys) {
                    csv += ",";
                    const json& s = r["summary"];
                    if (!s.contains(k) || s[k].is_null()) continue;
                    if (s[k].is_boolean()) csv += s[k].get<bool>() ? "1" : "0";
                    else if (s[k].is_number_float()) csv += detail::fmt(s[k].get<double>());
                    else csv += s[k].dump();
                }
                csv += "\n";
            }
            out.put_csv("sweep.csv", csv);
            manifest["sweep"] = {{"param", param}, {"values", values}};
        } else {
            const auto res = detail::run_kind(c, out, "");
            ok = res.runs_ok;
            diverged = res.runs_diverged;
            for (auto id : res.diverged_ids) diverged_ids.push_back(id);
            out.put_json("summary.json", res.summary);
            if (c.kind == "simulate" && c.runs <= 10000) {
                json st = json::array();
                for (std::uint64_t s = 0; s < c.runs; ++s)
                    st.push_back(std::find(res.diverged_ids.begin(), res.diverged_ids.end(), s) == res.diverged_ids.end()
                                     ? "ok"
                                     : "diverged");
                manifest["trajectory_status"] = st;
            }
        }
        out.put_json("config.json", c.hashed());
        manifest["runs"] = {{"ok", ok}, {"diverged", diverged}, {"diverged_ids", diverged_ids}};
        return {out.commit(std::move(manifest)), out.root()};
    } catch (const std::exception& e) {
        out.abort(e.what());
        throw RunAborted(e.what());
    }
}

}  // namespace pam
