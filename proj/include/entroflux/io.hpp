#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "entroflux/process.hpp"

namespace entroflux {

inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write " + path.string());
    f << body;
}

inline nlohmann::json load_json(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

#ifndef ENTROFLUX_BUILD_ID
#define ENTROFLUX_BUILD_ID "unknown"
#endif

// Every output directory gets a manifest tying artifacts to the exact config,
// build and seeds that produced them.
inline void write_manifest(const std::filesystem::path& dir, const nlohmann::json& config,
                           const nlohmann::json& seeds, double wallclock_s) {
    nlohmann::json m;
    m["config"] = config;
    m["build"] = ENTROFLUX_BUILD_ID;
    m["seeds"] = seeds;
    m["wallclock_s"] = wallclock_s;
    const auto now = std::chrono::system_clock::now();
    m["unix_time"] = std::chrono::duration_cast<std::chrono::seconds>(
                         now.time_since_epoch()).count();
    std::ofstream f(dir / "manifest.json");
    if (!f) throw ConfigError("cannot write manifest in " + dir.string());
    f << m.dump(2) << "\n";
}

class Stopwatch {
public:
    Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

}  // namespace entroflux
