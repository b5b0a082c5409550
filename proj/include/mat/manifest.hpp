#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mat/errors.hpp"

namespace mat {

/// Every CLI run drops one of these next to its outputs so a run can be
/// reproduced from (command, config, seed) alone.
struct RunManifest {
    std::string command;
    nlohmann::json config;  // full config snapshot
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::string build_id;
    std::string started_at;
    std::string finished_at;

    static std::string now_iso8601() {
        const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        char buf[32];
        std::tm tm{};
        gmtime_r(&t, &tm);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    void write(const std::filesystem::path& dir) const {
        nlohmann::json j{{"command", command}, {"config", config},  {"seed", seed},
                         {"inputs", inputs},   {"outputs", outputs}, {"build_id", build_id},
                         {"started_at", started_at}, {"finished_at", finished_at}};
        const auto path = dir / "run_manifest.json";
        std::ofstream os(path);
        if (!os) throw IoError("cannot write '" + path.string() + "'");
        os << j.dump(2) << "\n";
    }
};

}  // namespace mat
