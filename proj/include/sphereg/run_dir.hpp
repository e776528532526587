#pragma once

// Run directories: every artifact of one command plus manifest.json, which
// lists the SHA-256 of each file. Nothing time-dependent is recorded, so a
// seeded rerun reproduces the directory byte for byte. Needs OpenSSL.

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sphereg/error.hpp"
#include "sphereg/io.hpp"

namespace sphereg {

inline constexpr const char* kToolVersion = "sphereg 0.1.0";

inline std::string sha256_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    fail(ErrorCode::Io, "SHA-256 unavailable");
  }
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 15]);
  }
  return out;
}

/// Hashes every regular file under `dir` (except the manifest itself) in
/// sorted relative-path order and writes manifest.json.
inline nlohmann::json write_manifest(const std::filesystem::path& dir, const std::string& command, std::uint64_t seed,
                                     const nlohmann::json& extra = nlohmann::json::object()) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), dir).generic_string();
    if (rel != "manifest.json") files.push_back(rel);
  }
  std::sort(files.begin(), files.end());
  nlohmann::json hashes = nlohmann::json::object();
  for (const std::string& f : files) hashes[f] = sha256_hex(dir / f);
  nlohmann::json m = {{"tool", kToolVersion}, {"command", command}, {"seed", seed}, {"sha256", hashes}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  io::write_json(dir / "manifest.json", m);
  return m;
}

}  // namespace sphereg
