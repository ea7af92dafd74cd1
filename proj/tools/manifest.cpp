#include "manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>

#include "unitmt/common.hpp"

namespace unitmt::cli {

using nlohmann::json;

std::string git_blob_sha1(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot open '" + path + "'");
  const std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  const std::string header = "blob " + std::to_string(content.size()) + '\0';

  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw std::runtime_error("sha1 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

namespace {

json hashed(const std::vector<std::string>& paths) {
  json out = json::array();
  for (const auto& p : paths) out.push_back({{"path", p}, {"sha1", git_blob_sha1(p)}});
  return out;
}

}  // namespace

void Manifest::write(const std::string& path) const {
  json j = {{"command", command},
            {"argv", argv},
            {"config_path", config_path.empty() ? json(nullptr) : json(config_path)},
            {"config", config},
            {"seeds", seeds},
            {"inputs", hashed(inputs)},
            {"outputs", hashed(outputs)},
            {"metrics", metrics},
            {"started_at", started_at},
            {"finished_at", utc_now()}};
  std::ofstream os(path);
  if (!os) throw InputError("cannot write manifest '" + path + "'");
  os << j.dump(2) << '\n';
}

json verify_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open manifest '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw InputError("manifest '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.contains("argv") || !j.contains("inputs") || !j["argv"].is_array()) {
    throw InputError("manifest '" + path + "' lacks argv or inputs");
  }
  for (const auto& in : j["inputs"]) {
    const std::string p = in.at("path").get<std::string>();
    if (!std::filesystem::exists(p)) throw InputError("resume: input '" + p + "' is missing");
    if (git_blob_sha1(p) != in.at("sha1").get<std::string>()) {
      throw InputError("resume: input '" + p + "' changed since the recorded run");
    }
  }
  return j;
}

}  // namespace unitmt::cli
