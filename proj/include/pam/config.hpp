#pragma once

// Experiment configuration files: "key = value" lines grouped by [section]
// headers, or the same schema as a JSON object. Both parse into one JSON
// tree; typed getters report the offending key on failure.

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pam/error.hpp"

namespace pam::config {

using nlohmann::json;

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return std::string(s.substr(a, b - a));
}

inline json scalar(const std::string& v) {
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
        return v.substr(1, v.size() - 2);
    if (v == "true") return true;
    if (v == "false") return false;
    {
        std::uint64_t u = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), u);
        if (ec == std::errc() && p == v.data() + v.size()) return u;
    }
    {
        std::int64_t i = 0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), i);
        if (ec == std::errc() && p == v.data() + v.size()) return i;
    }
    {
        double d = 0.0;
        auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), d);
        if (ec == std::errc() && p == v.data() + v.size()) return d;
    }
    return v;
}

inline json value(const std::string& raw) {
    std::string v = trim(raw);
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front() &&
        v.find(v.front(), 1) == v.size() - 1)
        return scalar(v);
    if (v.size() >= 2 && v.front() == '[' && v.back() == ']') v = trim(std::string_view(v).substr(1, v.size() - 2));
    else if (v.find(',') == std::string::npos) return scalar(v);
    json arr = json::array();
    if (v.empty()) return arr;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = v.find(',', start);
        arr.push_back(scalar(trim(std::string_view(v).substr(start, comma - start))));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return arr;
}

}  // namespace detail

/// Parses "key = value" text. Lines starting with # or ; are comments.
/// A value with commas, or wrapped in [ ], is a list.
inline json parse_ini(std::string_view text) {
    json root = json::object();
    json* section = &root;
    std::string section_name;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = detail::trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        const auto where = "line " + std::to_string(lineno) + ": ";
        if (t.front() == '[') {
            if (t.back() != ']') throw FormatError(where + "unterminated section header");
            section_name = detail::trim(std::string_view(t).substr(1, t.size() - 2));
            if (section_name.empty()) throw FormatError(where + "empty section name");
            if (root.contains(section_name)) throw FormatError(where + "duplicate section [" + section_name + "]");
            root[section_name] = json::object();
            section = &root[section_name];
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw FormatError(where + "expected key = value");
        const std::string key = detail::trim(std::string_view(t).substr(0, eq));
        if (key.empty()) throw FormatError(where + "empty key");
        if (section->contains(key))
            throw FormatError(where + "duplicate key '" + (section_name.empty() ? key : section_name + "." + key) + "'");
        (*section)[key] = detail::value(t.substr(eq + 1));
    }
    return root;
}

/// JSON if the first non-blank character is '{', key = value otherwise.
inline json parse_text(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string_view::npos && text[first] == '{') {
        try {
            json j = json::parse(text);
            if (!j.is_object()) throw FormatError("config: top level must be an object");
            return j;
        } catch (const json::parse_error& e) {
            throw FormatError(std::string("config: ") + e.what());
        }
    }
    return parse_ini(text);
}

inline json load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("config: cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str());
}

/// FNV-1a 64-bit digest as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Typed access by dotted path "section.key".

inline const json* find(const json& root, std::string_view path) {
    const json* cur = &root;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string part(path.substr(start, dot - start));
        if (!cur->is_object() || !cur->contains(part)) return nullptr;
        cur = &(*cur)[part];
        if (dot == std::string_view::npos) return cur;
        start = dot + 1;
    }
}

inline json& ensure(json& root, std::string_view path) {
    json* cur = &root;
    std::size_t start = 0;
    while (true) {
        const std::size_t dot = path.find('.', start);
        const std::string part(path.substr(start, dot - start));
        if (!cur->is_object()) throw ValidationError(std::string(path) + ": parent is not a section");
        cur = &(*cur)[part];
        if (dot == std::string_view::npos) return *cur;
        start = dot + 1;
    }
}

inline bool has(const json& root, std::string_view path) { return find(root, path) != nullptr; }

inline double get_double(const json& root, std::string_view path, std::optional<double> fallback = std::nullopt) {
    const json* v = find(root, path);
    if (v == nullptr) {
        if (fallback) return *fallback;
        throw ValidationError(std::string(path) + ": required key missing");
    }
    if (!v->is_number()) throw ValidationError(std::string(path) + ": expected a number");
    return v->get<double>();
}

inline std::uint64_t get_u64(const json& root, std::string_view path, std::optional<std::uint64_t> fallback = std::nullopt) {
    const json* v = find(root, path);
    if (v == nullptr) {
        if (fallback) return *fallback;
        throw ValidationError(std::string(path) + ": required key missing");
    }
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v->get<std::int64_t>());
    if (v->is_number_float()) {
        const double d = v->get<double>();
        if (d >= 0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
    }
    throw ValidationError(std::string(path) + ": expected a nonnegative integer");
}

inline std::int64_t get_int(const json& root, std::string_view path, std::optional<std::int64_t> fallback = std::nullopt) {
    const json* v = find(root, path);
    if (v == nullptr) {
        if (fallback) return *fallback;
        throw ValidationError(std::string(path) + ": required key missing");
    }
    if (!v->is_number_integer()) throw ValidationError(std::string(path) + ": expected an integer");
    return v->get<std::int64_t>();
}

inline bool get_bool(const json& root, std::string_view path, bool fallback) {
    const json* v = find(root, path);
    if (v == nullptr) return fallback;
    if (!v->is_boolean()) throw ValidationError(std::string(path) + ": expected true or false");
    return v->get<bool>();
}

inline std::string get_string(const json& root, std::string_view path, std::optional<std::string> fallback = std::nullopt) {
    const json* v = find(root, path);
    if (v == nullptr) {
        if (fallback) return *fallback;
        throw ValidationError(std::string(path) + ": required key missing");
    }
    if (!v->is_string()) throw ValidationError(std::string(path) + ": expected a string");
    return v->get<std::string>();
}

/// A list of numbers; a single number is a one-element list, and
/// "lo:hi:step" expands to lo, lo + step, ... <= hi.
inline std::vector<double> get_doubles(const json& root, std::string_view path,
                                       std::optional<std::vector<double>> fallback = std::nullopt) {
    const json* v = find(root, path);
    if (v == nullptr) {
        if (fallback) return *fallback;
        throw ValidationError(std::string(path) + ": required key missing");
    }
    std::vector<double> out;
    if (v->is_number()) return {v->get<double>()};
    if (v->is_string()) {
        double lo = 0, hi = 0, step = 0;
        char extra = 0;
        if (std::sscanf(v->get<std::string>().c_str(), "%lf:%lf:%lf%c", &lo, &hi, &step, &extra) != 3 || !(step > 0))
            throw ValidationError(std::string(path) + ": expected a number list or lo:hi:step");
        for (long k = 0; lo + static_cast<double>(k) * step <= hi + 1e-9 * step; ++k)
            out.push_back(lo + static_cast<double>(k) * step);
        return out;
    }
    if (!v->is_array()) throw ValidationError(std::string(path) + ": expected a list of numbers");
    for (const auto& e : *v) {
        if (!e.is_number()) throw ValidationError(std::string(path) + ": expected a list of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

}  // namespace pam::config
