#include "cxrlm/manifest.hpp"

#include "cxrlm/errors.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <fstream>

namespace cxrlm {

std::string iso8601_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["seed"] = seed;
    j["config"] = config_json.empty() ? nlohmann::ordered_json(nullptr)
                                      : nlohmann::ordered_json::parse(config_json);
    j["artifacts"] = artifacts;
    j["started_at"] = started_at;
    j["finished_at"] = finished_at.empty() ? nlohmann::ordered_json(nullptr)
                                           : nlohmann::ordered_json(finished_at);
    j["status"] = status;
    return j.dump(2) + "\n";
}

namespace {
void write_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("manifest: cannot write '" + path + "'");
    out << contents;
}
} // namespace

void RunManifest::start(const std::string& path) {
    started_at = iso8601_now();
    status = "running";
    write_file(path, to_json());
}

void RunManifest::finish(const std::string& path, bool ok) {
    finished_at = iso8601_now();
    status = ok ? "ok" : "error";
    write_file(path, to_json());
}

} // namespace cxrlm
