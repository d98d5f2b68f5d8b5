#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace cxrlm {

inline constexpr const char* kToolVersion = "0.1.0";

// Per-run provenance record: command, full config snapshot, seed and artifact
// paths. Written when a run starts and finalized when it ends.
struct RunManifest {
    std::string command;
    std::string config_json; // serialized config snapshot
    uint64_t seed = 0;
    std::map<std::string, std::string> artifacts;
    std::string started_at;
    std::string finished_at;
    std::string status = "running"; // running | ok | error

    void start(const std::string& path); // records the start timestamp, writes
    void finish(const std::string& path, bool ok);

    std::string to_json() const;
};

std::string iso8601_now();

} // namespace cxrlm
