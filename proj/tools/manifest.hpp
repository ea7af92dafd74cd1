#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace unitmt::cli {

// SHA-1 over "blob <size>\0" + content, as `git hash-object` prints it.
std::string git_blob_sha1(const std::string& path);

std::string utc_now();

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_path;
  nlohmann::json config;
  nlohmann::json seeds = nlohmann::json::object();
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  nlohmann::json metrics = nlohmann::json::object();
  std::string started_at;

  void write(const std::string& path) const;
};

// Throws InputError when a recorded input is missing or its hash changed.
nlohmann::json verify_manifest(const std::string& path);

}  // namespace unitmt::cli
