#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "trilevel/model.hpp"

namespace trilevel::cli {

#ifndef TRILEVEL_VERSION
#define TRILEVEL_VERSION "0.0.0"
#endif

inline constexpr const char* kToolVersion = TRILEVEL_VERSION;

// Record of one run. Only the input fields enter the hash, so repeating a
// run yields the same hash and byte-identical CSV.
struct RunManifest {
  std::string command;
  LaserParams params;
  std::string axis;
  std::vector<double> grid;
  std::vector<std::string> methods;
  std::optional<std::uint64_t> master_seed;
  std::optional<std::size_t> trajectories;
  nlohmann::json settings = nlohmann::json::object();
  std::string tool_version = kToolVersion;
  std::string started_at;
  std::string finished_at;
  unsigned workers = 1;
};

inline nlohmann::json manifest_inputs(const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["params"] = {{"A", m.params.A},
                 {"kappa", m.params.kappa},
                 {"r", m.params.r},
                 {"eta", m.params.eta},
                 {"beta", m.params.beta}};
  j["sweep"] = {{"axis", m.axis}, {"grid", m.grid}};
  j["methods"] = m.methods;
  j["master_seed"] = m.master_seed ? nlohmann::json(*m.master_seed) : nlohmann::json();
  j["trajectories"] = m.trajectories ? nlohmann::json(*m.trajectories) : nlohmann::json();
  j["settings"] = m.settings;
  j["tool_version"] = m.tool_version;
  return j;
}

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string manifest_hash(const RunManifest& m) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(manifest_inputs(m).dump())));
  return buf;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Appends one JSON line; existing records are never rewritten.
inline void append_manifest(const std::string& path, const RunManifest& m) {
  auto j = manifest_inputs(m);
  j["hash"] = manifest_hash(m);
  j["started_at"] = m.started_at;
  j["finished_at"] = m.finished_at;
  j["workers"] = m.workers;
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("cannot open manifest " + path);
  os << j.dump() << '\n';
}

}  // namespace trilevel::cli
