#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#ifndef TEXFIELD_GIT_DESCRIBE
#define TEXFIELD_GIT_DESCRIBE "unknown"
#endif

namespace texfield {

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Provenance record written next to every command's outputs: the command, a
// snapshot of every resolved option, the seed, the file paths touched, wall
// time, and the build id. Enough to rerun the command exactly.
struct RunManifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();  // resolved flag -> value
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double wall_time_s = 0.0;

    nlohmann::json to_json() const {
        return {
            {"command", command},
            {"config", config},
            {"seed", seed},
            {"inputs", inputs},
            {"outputs", outputs},
            {"wall_time_s", wall_time_s},
            {"build", TEXFIELD_GIT_DESCRIBE},
            {"timestamp_utc", utc_timestamp()},
        };
    }
};

// Atomic: readers never see a partially written manifest.
inline void write_manifest(const std::string& path, const RunManifest& manifest) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp);
        if (!os) throw std::runtime_error("cannot open for writing: " + tmp);
        os << manifest.to_json().dump(2) << '\n';
        os.flush();
        if (!os) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace texfield
