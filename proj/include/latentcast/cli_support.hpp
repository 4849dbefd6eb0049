#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "latentcast/common.hpp"

namespace latentcast {

// Flat key=value run configuration; '#' starts a comment. Unknown keys are
// hard errors at the point of use.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig from_file(const std::string& path);
  static KeyValueConfig from_string(const std::string& text);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Throws ConfigError naming the first key outside `allowed`.
  void ensure_known(const std::set<std::string>& allowed) const;

  const std::map<std::string, std::string>& values() const { return values_; }
  std::string canonical() const;  // deterministic text used for hashing

 private:
  std::map<std::string, std::string> values_;
};

std::string fnv1a_hex(const std::string& data);

// "1..8" or "0.5,1,2" -> seconds.
std::vector<double> parse_horizons(const std::string& text);

// Every command writes its manifest before any other output.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string weights_path;
  std::string out_dir;
  std::string tool_version;
};

void write_manifest(const RunManifest& manifest, const std::string& path);

// Binary PGM (P5), one byte per pixel, probability 1.0 -> 255. Row 0 of the
// buffer is written last so images render north-up.
void write_pgm(const std::string& path, int width, int height, std::span<const float> probs);

// Binary PPM (P6) with 8-bit channels.
void write_ppm(const std::string& path, int width, int height,
               std::span<const std::uint8_t> rgb);

}  // namespace latentcast
