#include "pixellm/manifest.hpp"

#include <ctime>

#include "json.hpp"

namespace pixellm {

using nlohmann::json;

std::string now_timestamp_utc() {
  std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void RunManifest::add_input(const std::string& path) {
  input_digests[path] = sha256_hex(read_file(path));
}

namespace {

json manifest_body(const RunManifest& m) {
  json j;
  j["command"] = m.command;
  j["args"] = m.args;
  j["config"] = m.config;
  j["seed"] = m.seed;
  j["input_digests"] = m.input_digests;
  j["tool_version"] = m.tool_version;
  return j;
}

}  // namespace

std::string RunManifest::repro_key() const {
  // Canonical dump of everything except the timestamp.
  return sha256_hex(manifest_body(*this).dump());
}

std::string RunManifest::to_json() const {
  json j = manifest_body(*this);
  j["timestamp"] = timestamp;
  j["repro_key"] = repro_key();
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("manifest: invalid JSON: ") + e.what());
  }
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.args = j.at("args").get<std::vector<std::string>>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.seed = j.at("seed").get<uint64_t>();
    m.input_digests =
        j.at("input_digests").get<std::map<std::string, std::string>>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.timestamp = j.value("timestamp", std::string());
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: missing or mistyped field: ") +
                      e.what());
  }
  return m;
}

void RunManifest::write(const std::string& path) const {
  write_file(path, to_json());
}

RunManifest RunManifest::read(const std::string& path) {
  return from_json(read_file(path));
}

}  // namespace pixellm
