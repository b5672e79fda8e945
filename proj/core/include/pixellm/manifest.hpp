#pragma once

#include <map>
#include <string>
#include <vector>

#include "pixellm/util.hpp"

namespace pixellm {

// Reproducibility record written exactly once per CLI run, next to the run's
// outputs. repro_key covers everything except the timestamp, so identical
// keys mean identical resolved inputs and configuration.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::map<std::string, std::string> config;
  uint64_t seed = 0;
  std::map<std::string, std::string> input_digests;  // path -> sha256
  std::string tool_version;
  std::string timestamp;  // UTC, ISO 8601

  // Digest of the file's contents under its path key; missing file -> error.
  void add_input(const std::string& path);

  std::string repro_key() const;
  std::string to_json() const;
  static RunManifest from_json(const std::string& text);

  void write(const std::string& path) const;
  static RunManifest read(const std::string& path);
};

std::string now_timestamp_utc();

}  // namespace pixellm
