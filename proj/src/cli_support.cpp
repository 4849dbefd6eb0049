#include "latentcast/cli_support.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace latentcast {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str());
}

KeyValueConfig KeyValueConfig::from_string(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + " is not key=value: " + line);
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t used = 0;
    const double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + " is not a number: " + it->second);
  }
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  const double v = get_double(key, static_cast<double>(fallback));
  if (v != std::floor(v)) throw ConfigError("config key " + key + " is not an integer");
  return static_cast<int>(v);
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config key " + key + " is not a boolean: " + it->second);
}

void KeyValueConfig::ensure_known(const std::set<std::string>& allowed) const {
  for (const auto& [key, value] : values_) {
    if (!allowed.count(key)) throw ConfigError("unknown config key: " + key);
  }
}

std::string KeyValueConfig::canonical() const {
  std::string out;
  for (const auto& [key, value] : values_) out += key + "=" + value + "\n";
  return out;
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<double> parse_horizons(const std::string& text) {
  std::vector<double> out;
  const auto dots = text.find("..");
  if (dots != std::string::npos) {
    const int a = std::stoi(text.substr(0, dots));
    const int b = std::stoi(text.substr(dots + 2));
    if (b < a) throw UsageError("horizon range end before start: " + text);
    for (int h = a; h <= b; ++h) out.push_back(static_cast<double>(h));
    return out;
  }
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  if (out.empty()) throw UsageError("no horizons in: " + text);
  return out;
}

void write_manifest(const RunManifest& m, const std::string& path) {
  nlohmann::json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["weights"] = m.weights_path;
  j["out_dir"] = m.out_dir;
  j["tool_version"] = m.tool_version;
  const auto now = std::chrono::system_clock::now().time_since_epoch();
  j["written_unix_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest: " + path);
  os << j.dump(2) << "\n";
}

void write_pgm(const std::string& path, int width, int height, std::span<const float> probs) {
  if (static_cast<std::size_t>(width) * height != probs.size()) {
    throw ShapeError("pgm: buffer does not match dimensions");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image: " + path);
  os << "P5\n" << width << " " << height << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(width));
  for (int r = height - 1; r >= 0; --r) {
    for (int c = 0; c < width; ++c) {
      const float p = std::clamp(probs[static_cast<std::size_t>(r) * width + c], 0.0f, 1.0f);
      row[static_cast<std::size_t>(c)] = static_cast<unsigned char>(std::lround(p * 255.0f));
    }
    os.write(reinterpret_cast<const char*>(row.data()), width);
  }
  if (!os) throw IoError("failed writing image: " + path);
}

void write_ppm(const std::string& path, int width, int height,
               std::span<const std::uint8_t> rgb) {
  if (static_cast<std::size_t>(width) * height * 3 != rgb.size()) {
    throw ShapeError("ppm: buffer does not match dimensions");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image: " + path);
  os << "P6\n" << width << " " << height << "\n255\n";
  for (int r = height - 1; r >= 0; --r) {
    os.write(reinterpret_cast<const char*>(rgb.data() + static_cast<std::size_t>(r) * width * 3),
             static_cast<std::streamsize>(width) * 3);
  }
  if (!os) throw IoError("failed writing image: " + path);
}

}  // namespace latentcast
