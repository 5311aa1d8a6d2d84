#pragma once

// Binary snapshot format. One frame per snapshot, frames concatenated:
//
//   "PAMF"  u32 version  f64 dx  f64 dt  f64 t  u64 n  f64[n] values
//   u64 metadata_length  metadata (UTF-8 JSON)
//
// All integers and doubles are little-endian regardless of host. The JSON
// carries seed, stream_id, scheme, boundary, x_min and the rest of the run
// description, repeated in every frame so a single frame is self-contained.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "pam/error.hpp"
#include "pam/she/solver.hpp"

namespace pam {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

/// Reorders the bytes of a value held in `host` byte order into
/// little-endian order. Split out so a big-endian host can be emulated.
inline void host_to_le(unsigned char* bytes, std::size_t width, std::endian host) noexcept {
    if (host == std::endian::big)
        for (std::size_t i = 0; i < width / 2; ++i) std::swap(bytes[i], bytes[width - 1 - i]);
}

class ByteWriter {
public:
    explicit ByteWriter(std::endian host = std::endian::native) : host_(host) {}

    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class T>
    void put(T v) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &v, sizeof(T));
        // A foreign host would hold the value in its own byte order.
        if (host_ != std::endian::native) std::reverse(b, b + sizeof(T));
        host_to_le(b, sizeof(T), host_);
        raw(b, sizeof(T));
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::endian host_;
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

    bool done() const noexcept { return pos_ == in_.size(); }
    void need(std::size_t n, const char* what) const {
        if (in_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what);
    }
    template <class T>
    T get(const char* what) {
        need(sizeof(T), what);
        unsigned char b[sizeof(T)];
        std::memcpy(b, in_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        if constexpr (std::endian::native == std::endian::big) host_to_le(b, sizeof(T), std::endian::big);
        T v;
        std::memcpy(&v, b, sizeof(T));
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

inline nlohmann::json init_to_json(const InitialData& init) {
    nlohmann::json j;
    j["kind"] = std::string(init_kind(init));
    if (const auto* f = std::get_if<FlatInit>(&init)) j["c"] = f->c;
    else if (const auto* s = std::get_if<SampledInit>(&init)) j["values"] = s->values;
    else j["x0"] = std::get<DiracInit>(init).x0;
    return j;
}

inline InitialData init_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "flat") return FlatInit{j.at("c").get<double>()};
    if (kind == "sampled") return SampledInit{j.at("values").get<std::vector<double>>()};
    if (kind == "dirac") return DiracInit{j.at("x0").get<double>()};
    throw FormatError("checkpoint metadata: unknown init kind '" + kind + "'");
}

inline nlohmann::json trajectory_metadata(const Trajectory& tr) {
    return {{"seed", tr.master_seed},
            {"stream_id", tr.stream_id},
            {"scheme", std::string(to_string(tr.grid.scheme))},
            {"boundary", std::string(to_string(tr.grid.boundary))},
            {"x_min", tr.grid.x_min},
            {"x_max", tr.grid.x_max},
            {"t_end", tr.grid.t_end},
            {"snapshot_times", tr.grid.snapshot_times},
            {"init", init_to_json(tr.init)},
            {"status", std::string(to_string(tr.status))}};
}

}  // namespace detail

/// Serialises every snapshot of the trajectory. `host` only exists so tests
/// can emulate a writer running on a big-endian machine.
inline std::vector<std::uint8_t> checkpoint(const Trajectory& tr, std::endian host = std::endian::native) {
    detail::ByteWriter w(host);
    const std::string meta = detail::trajectory_metadata(tr).dump();
    for (const auto& snap : tr.snapshots) {
        w.raw("PAMF", 4);
        w.put<std::uint32_t>(kCheckpointVersion);
        w.put<double>(tr.grid.dx);
        w.put<double>(tr.grid.dt);
        w.put<double>(snap.t);
        w.put<std::uint64_t>(snap.values.size());
        for (double v : snap.values) w.put<double>(v);
        w.put<std::uint64_t>(meta.size());
        w.raw(meta.data(), meta.size());
    }
    return w.take();
}

/// Inverse of checkpoint(). Throws FormatError on bad magic, unknown
/// version, truncation or inconsistent frames; never returns partial data.
inline Trajectory restore(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    Trajectory tr;
    bool first = true;
    if (r.done()) throw FormatError("checkpoint is empty");
    while (!r.done()) {
        if (r.bytes(4, "magic") != "PAMF") throw FormatError("checkpoint: bad magic (expected PAMF)");
        const auto version = r.get<std::uint32_t>("version");
        if (version != kCheckpointVersion)
            throw FormatError("checkpoint: unsupported version " + std::to_string(version));
        const double dx = r.get<double>("dx");
        const double dt = r.get<double>("dt");
        const double t = r.get<double>("t");
        const auto n = r.get<std::uint64_t>("site count");
        if (n > (std::uint64_t{1} << 40)) throw FormatError("checkpoint: implausible site count");
        r.need(n * sizeof(double), "values");
        std::vector<double> values(n);
        for (auto& v : values) v = r.get<double>("values");
        const auto mlen = r.get<std::uint64_t>("metadata length");
        const std::string meta = r.bytes(mlen, "metadata");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(meta);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("checkpoint metadata: ") + e.what());
        }
        try {
            if (first) {
                tr.grid.dx = dx;
                tr.grid.dt = dt;
                tr.grid.x_min = j.at("x_min").get<double>();
                tr.grid.x_max = j.at("x_max").get<double>();
                tr.grid.t_end = j.at("t_end").get<double>();
                tr.grid.snapshot_times = j.at("snapshot_times").get<std::vector<double>>();
                tr.grid.scheme = parse_scheme(j.at("scheme").get<std::string>());
                tr.grid.boundary = parse_boundary(j.at("boundary").get<std::string>());
                tr.master_seed = j.at("seed").get<std::uint64_t>();
                tr.stream_id = j.at("stream_id").get<std::uint64_t>();
                tr.init = detail::init_from_json(j.at("init"));
                tr.status = j.at("status").get<std::string>() == "ok" ? RunStatus::ok : RunStatus::diverged;
                first = false;
            } else if (dx != tr.grid.dx || dt != tr.grid.dt) {
                throw FormatError("checkpoint: frames disagree on dx/dt");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(std::string("checkpoint metadata: ") + e.what());
        } catch (const ValidationError& e) {
            throw FormatError(std::string("checkpoint metadata: ") + e.what());
        }
        if (n != tr.grid.site_count()) throw FormatError("checkpoint: site count does not match grid");
        tr.snapshots.push_back({t, std::move(values), tr.grid.lattice()});
    }
    return tr;
}

/// Writes the trajectory as CSV rows t,x,u.
inline void write_csv(std::ostream& os, const Trajectory& tr) {
    os << "t,x,u\n";
    char buf[96];
    for (const auto& snap : tr.snapshots)
        for (std::size_t i = 0; i < snap.values.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", snap.t, snap.lattice.x(i), snap.values[i]);
            os << buf;
        }
}

}  // namespace pam
