#include "latentcast/weights.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

namespace latentcast {

namespace {

constexpr char kMagic[4] = {'L', 'C', 'W', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

template <typename T>
void reg(ParamMap<T>& map, const std::string& name, const Tensor<T>& t) {
  if (!map.emplace(name, t).second) {
    throw ConfigError("duplicate parameter name: " + name);
  }
}

template <typename T>
void reg_block(ParamMap<T>& map, const std::string& prefix, AttentionWeights<T>& w) {
  for (std::size_t h = 0; h < w.wq.size(); ++h) {
    const std::string hs = prefix + ".h" + std::to_string(h);
    reg(map, hs + ".wq", w.wq[h]);
    reg(map, hs + ".wk", w.wk[h]);
    reg(map, hs + ".wv", w.wv[h]);
  }
  reg(map, prefix + ".wo", w.wo);
  reg(map, prefix + ".mlp.w1", w.mlp.w1);
  reg(map, prefix + ".mlp.b1", w.mlp.b1);
  reg(map, prefix + ".mlp.w2", w.mlp.w2);
  reg(map, prefix + ".mlp.b2", w.mlp.b2);
  reg(map, prefix + ".lnq.s", w.ln_q.scale);
  reg(map, prefix + ".lnq.o", w.ln_q.offset);
  reg(map, prefix + ".lnkv.s", w.ln_kv.scale);
  reg(map, prefix + ".lnkv.o", w.ln_kv.offset);
  reg(map, prefix + ".lnm.s", w.ln_mlp.scale);
  reg(map, prefix + ".lnm.o", w.ln_mlp.offset);
}

// Configuration scalars ride along in the container so a checkpoint is
// self-describing.
std::map<std::string, std::vector<float>> config_entries(const ModelConfig& c) {
  std::map<std::string, std::vector<float>> e;
  e["config.n_latent"] = {static_cast<float>(c.n_latent)};
  e["config.c_latent"] = {static_cast<float>(c.c_latent)};
  e["config.heads"] = {static_cast<float>(c.heads)};
  e["config.depth"] = {static_cast<float>(c.depth)};
  std::vector<float> periods;
  for (int p : c.propagate_periods_ms) periods.push_back(static_cast<float>(p));
  e["config.periods_ms"] = periods;
  e["config.use_road"] = {c.use_road ? 1.f : 0.f};
  e["config.use_signals"] = {c.use_signals ? 1.f : 0.f};
  e["config.flow_head"] = {c.flow_head ? 1.f : 0.f};
  e["config.class_aware"] = {c.class_aware ? 1.f : 0.f};
  e["config.raster_px"] = {static_cast<float>(c.raster_px)};
  e["config.f_min"] = {static_cast<float>(c.f_min)};
  e["config.f_max_agent"] = {static_cast<float>(c.f_max_agent)};
  e["config.f_max_signal"] = {static_cast<float>(c.f_max_signal)};
  e["config.f_max_road"] = {static_cast<float>(c.f_max_road)};
  e["config.f_max_query"] = {static_cast<float>(c.f_max_query)};
  e["config.roi"] = {static_cast<float>(c.roi.center_x), static_cast<float>(c.roi.center_y),
                     static_cast<float>(c.roi.extent_x), static_cast<float>(c.roi.extent_y)};
  return e;
}

ModelConfig config_from_entries(const std::map<std::string, std::vector<float>>& e) {
  auto get = [&](const std::string& k) -> const std::vector<float>& {
    auto it = e.find(k);
    if (it == e.end()) throw IoError("weight container is missing " + k);
    return it->second;
  };
  ModelConfig c;
  c.n_latent = static_cast<int>(get("config.n_latent")[0]);
  c.c_latent = static_cast<int>(get("config.c_latent")[0]);
  c.heads = static_cast<int>(get("config.heads")[0]);
  c.depth = static_cast<int>(get("config.depth")[0]);
  c.propagate_periods_ms.clear();
  for (float p : get("config.periods_ms")) c.propagate_periods_ms.push_back(static_cast<int>(p));
  c.use_road = get("config.use_road")[0] != 0.f;
  c.use_signals = get("config.use_signals")[0] != 0.f;
  c.flow_head = get("config.flow_head")[0] != 0.f;
  c.class_aware = get("config.class_aware")[0] != 0.f;
  c.raster_px = static_cast<int>(get("config.raster_px")[0]);
  c.f_min = get("config.f_min")[0];
  c.f_max_agent = get("config.f_max_agent")[0];
  c.f_max_signal = get("config.f_max_signal")[0];
  c.f_max_road = get("config.f_max_road")[0];
  c.f_max_query = get("config.f_max_query")[0];
  const auto& roi = get("config.roi");
  c.roi = RegionOfInterest{roi[0], roi[1], roi[2], roi[3]};
  return c;
}

template <typename V>
void write_u32(std::ostream& os, V v) {
  const std::uint32_t x = static_cast<std::uint32_t>(v);
  os.write(reinterpret_cast<const char*>(&x), sizeof(x));
}

template <typename V>
void write_u64(std::ostream& os, V v) {
  const std::uint64_t x = static_cast<std::uint64_t>(v);
  os.write(reinterpret_cast<const char*>(&x), sizeof(x));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t x = 0;
  is.read(reinterpret_cast<char*>(&x), sizeof(x));
  return x;
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t x = 0;
  is.read(reinterpret_cast<char*>(&x), sizeof(x));
  return x;
}

void write_entry(std::ostream& os, const std::string& name,
                 const std::vector<std::int64_t>& shape, const float* payload,
                 std::size_t numel) {
  write_u32(os, name.size());
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(os, shape.size());
  for (auto d : shape) write_u64(os, d);
  os.write(reinterpret_cast<const char*>(payload),
           static_cast<std::streamsize>(numel * sizeof(float)));
}

struct RawEntry {
  std::vector<std::int64_t> shape;
  std::vector<float> payload;
};

std::map<std::string, RawEntry> read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open weights file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError("bad magic in weights file: " + path);
  }
  const std::uint32_t version = read_u32(is);
  if (version != kFormatVersion) {
    throw IoError("unsupported weights format version " + std::to_string(version));
  }
  std::map<std::string, RawEntry> entries;
  while (true) {
    std::uint32_t name_len = 0;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (is.eof()) break;
    if (!is) throw IoError("truncated weights file: " + path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t rank = read_u32(is);
    RawEntry e;
    std::uint64_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::uint64_t d = read_u64(is);
      e.shape.push_back(static_cast<std::int64_t>(d));
      numel *= d;
    }
    e.payload.resize(numel);
    is.read(reinterpret_cast<char*>(e.payload.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!is) throw IoError("truncated weights file: " + path);
    entries.emplace(std::move(name), std::move(e));
  }
  return entries;
}

}  // namespace

template <typename T>
ModelWeights<T> ModelWeights<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.raster_px % kRoadPatchPx != 0) {
    throw ConfigError("raster resolution must be a multiple of the patch size");
  }
  if (cfg.propagate_periods_ms.empty()) {
    throw ConfigError("at least one propagation period is required");
  }
  ModelWeights<T> m;
  m.config = cfg;
  m.banks = FeatureBanks::from(cfg);
  std::mt19937 rng(static_cast<std::uint32_t>(splitmix64(seed)));

  auto& e = m.est;
  const int cl = cfg.c_latent;
  const AttentionConfig self_cfg{cl, cl, cl, cfg.heads, 0, 0, true};

  // Learned per-latent queries start from a small normal, everything else
  // from Glorot uniform.
  e.init_queries = Tensor<T>::zeros({cfg.n_latent, cl});
  fill_normal(e.init_queries, rng, T(0.02));
  reg(m.params, "init.queries", e.init_queries);

  e.init_cross = make_attention_weights<T>({cl, kAgentTokenWidth, cl, cfg.heads, 0, 0, true}, rng);
  reg_block(m.params, "init.cross", e.init_cross);
  for (int i = 0; i < cfg.depth; ++i) {
    e.init_self.push_back(make_attention_weights<T>(self_cfg, rng));
    reg_block(m.params, "init.self" + std::to_string(i), e.init_self.back());
  }

  std::vector<int> periods = cfg.propagate_periods_ms;
  std::sort(periods.begin(), periods.end());
  for (int p : periods) {
    auto& blocks = e.propagate[p];
    for (int i = 0; i < cfg.depth; ++i) {
      blocks.push_back(make_attention_weights<T>(self_cfg, rng));
      reg_block(m.params, "prop." + std::to_string(p) + ".self" + std::to_string(i),
                blocks.back());
    }
  }

  e.agent_cross = make_attention_weights<T>({cl, kAgentTokenWidth, cl, cfg.heads, 0, 0, true}, rng);
  reg_block(m.params, "agent.cross", e.agent_cross);

  if (cfg.use_signals) {
    e.signal_cross =
        make_attention_weights<T>({cl, kSignalTokenWidth, cl, cfg.heads, 0, 0, true}, rng);
    reg_block(m.params, "signal.cross", e.signal_cross);
    e.signal_self = make_attention_weights<T>(self_cfg, rng);
    reg_block(m.params, "signal.self", e.signal_self);
  }

  if (cfg.use_road) {
    e.road_cross =
        make_attention_weights<T>({cl, kRoadTokenWidth, cl, cfg.heads, 0, 0, true}, rng);
    reg_block(m.params, "road.cross", e.road_cross);
    e.road_self = make_attention_weights<T>(self_cfg, rng);
    reg_block(m.params, "road.self", e.road_self);

    const int patch_pixels = kRoadPatchPx * kRoadPatchPx;
    e.road_encoder.w1 = glorot_uniform<T>(patch_pixels, kRoadMlpWidth, rng);
    e.road_encoder.b1 = Tensor<T>::zeros({kRoadMlpWidth});
    e.road_encoder.w2 = glorot_uniform<T>(kRoadMlpWidth, kRoadMlpWidth, rng);
    e.road_encoder.b2 = Tensor<T>::zeros({kRoadMlpWidth});
    reg(m.params, "roadenc.w1", e.road_encoder.w1);
    reg(m.params, "roadenc.b1", e.road_encoder.b1);
    reg(m.params, "roadenc.w2", e.road_encoder.w2);
    reg(m.params, "roadenc.b2", e.road_encoder.b2);
  }

  // Occupancy emission: encoded query positions attend into the latent
  // state; no residual from the query encoding onto the output.
  e.out_cross = make_attention_weights<T>({kQueryWidth, cl, cl, cfg.heads, 0, 0, false}, rng);
  reg_block(m.params, "out.cross", e.out_cross);
  e.out_w = glorot_uniform<T>(cl, 1, rng);
  e.out_b = Tensor<T>::zeros({1});
  reg(m.params, "out.head.w", e.out_w);
  reg(m.params, "out.head.b", e.out_b);

  if (cfg.class_aware) {
    for (int k = 0; k < kAgentClasses; ++k) {
      auto w = glorot_uniform<T>(cl, 1, rng);
      auto b = Tensor<T>::zeros({1});
      e.class_heads.emplace_back(w, b);
      reg(m.params, "out.class" + std::to_string(k) + ".w", w);
      reg(m.params, "out.class" + std::to_string(k) + ".b", b);
    }
  }

  if (cfg.flow_head) {
    e.flow_w = glorot_uniform<T>(cl, 2, rng);
    e.flow_b = Tensor<T>::zeros({2});
    reg(m.params, "out.flow.w", e.flow_w);
    reg(m.params, "out.flow.b", e.flow_b);
  }

  return m;
}

template <typename T>
void ModelWeights<T>::save(const std::string& path,
                           const std::map<std::string, Tensor<T>>* extra) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write weights file: " + path);
  os.write(kMagic, 4);
  write_u32(os, kFormatVersion);

  // One lexicographically ordered sequence covering config, parameters and
  // any extra entries. Payload is always 32-bit float.
  std::map<std::string, std::pair<std::vector<std::int64_t>, std::vector<float>>> all;
  for (const auto& [name, values] : config_entries(config)) {
    all[name] = {{static_cast<std::int64_t>(values.size())}, values};
  }
  auto add_tensor = [&all](const std::string& name, const Tensor<T>& t) {
    std::vector<float> payload(static_cast<std::size_t>(t.numel()));
    for (std::int64_t i = 0; i < t.numel(); ++i) payload[static_cast<std::size_t>(i)] = static_cast<float>(t.data()[i]);
    all[name] = {t.shape(), std::move(payload)};
  };
  for (const auto& [name, t] : params) add_tensor(name, t);
  if (extra) {
    for (const auto& [name, t] : *extra) add_tensor(name, t);
  }
  for (const auto& [name, entry] : all) {
    write_entry(os, name, entry.first, entry.second.data(), entry.second.size());
  }
  if (!os) throw IoError("failed writing weights file: " + path);
}

template <typename T>
ModelWeights<T> ModelWeights<T>::load(const std::string& path,
                                      std::map<std::string, Tensor<T>>* extra) {
  auto entries = read_container(path);
  std::map<std::string, std::vector<float>> cfg_entries;
  for (const auto& [name, e] : entries) {
    if (name.rfind("config.", 0) == 0) cfg_entries[name] = e.payload;
  }
  ModelWeights<T> m = init(config_from_entries(cfg_entries), 0);
  for (auto& [name, t] : m.params) {
    auto it = entries.find(name);
    if (it == entries.end()) throw IoError("weights file is missing parameter " + name);
    if (it->second.shape != t.shape()) {
      throw IoError("shape mismatch for " + name + ": file " +
                    Tensor<T>::shape_string(it->second.shape) + " vs model " + t.shape_string());
    }
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      t.data()[i] = static_cast<T>(it->second.payload[static_cast<std::size_t>(i)]);
    }
  }
  if (extra) {
    for (const auto& [name, e] : entries) {
      if (name.rfind("config.", 0) == 0 || m.params.count(name)) continue;
      Tensor<T> t = Tensor<T>::zeros(e.shape);
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        t.data()[i] = static_cast<T>(e.payload[static_cast<std::size_t>(i)]);
      }
      (*extra)[name] = t;
    }
  }
  return m;
}

template class ModelWeights<float>;
template class ModelWeights<double>;

}  // namespace latentcast
