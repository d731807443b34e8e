#pragma once

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "debias/common.hpp"
#include "debias/rng.hpp"

namespace debias {

// Reproducibility sidecar written next to every output artifact: the exact
// command, the resolved config, the seed and digests of every input file.
struct RunManifest {
    std::string command;
    std::string config_snapshot;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> input_digests;  // path -> fnv1a-64 hex
    std::string tool_version = std::string(kToolName) + " " + kToolVersion;
    std::string wall_clock;

    void add_input(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), "manifest: cannot read input '" + path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        std::string bytes = buf.str();
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx",
                      static_cast<unsigned long long>(fnv1a64(bytes)));
        input_digests[path] = hex;
    }

    void stamp_now() {
        auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm_utc{};
        gmtime_r(&now, &tm_utc);
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
        wall_clock = buf;
    }

    nlohmann::json to_json() const {
        return {{"command", command},       {"config", config_snapshot},
                {"seed", seed},             {"inputs", input_digests},
                {"tool", tool_version},     {"wall_clock", wall_clock}};
    }
};

// Atomic write: temp file in the same directory, then rename.
inline void write_manifest(const RunManifest& manifest, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string final_path = dir + "/manifest.json";
    const std::string tmp_path = final_path + ".tmp";
    {
        std::ofstream out(tmp_path);
        require(out.good(), "manifest: cannot write '" + tmp_path + "'");
        out << manifest.to_json().dump(2) << '\n';
    }
    fs::rename(tmp_path, final_path);
}

}  // namespace debias
