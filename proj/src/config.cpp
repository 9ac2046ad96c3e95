#include "crossenc/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "crossenc/errors.hpp"

namespace crossenc {

using nlohmann::json;

std::string mode_to_string(Mode m) { return m == Mode::cross ? "cross-thought" : "mlm-only"; }

Mode mode_from_string(const std::string& s) {
  if (s == "cross-thought") return Mode::cross;
  if (s == "mlm-only") return Mode::mlm_only;
  throw ConfigError("unknown mode '" + s + "' (expected cross-thought or mlm-only)");
}

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  require(d > 0, "d must be positive");
  require(layers > 0, "layers must be positive");
  require(heads > 0 && d % heads == 0, "heads must be positive and divide d");
  require(cross_heads > 0 && d % cross_heads == 0, "cross_heads must be positive and divide d");
  require(n_special >= 1, "n_special must be >= 1");
  require(seq_len >= 2, "seq_len must be >= 2");
  require(max_pos >= seq_len, "max_pos must be >= seq_len");
  require(m_max >= 1, "m_max must be positive");
  require(vocab_size > reserved_ids(), "vocab_size must exceed the reserved id block");
  require(min_count >= 1, "min_count must be positive");
  require(cross_depth >= 1, "cross_depth must be positive");
  require(fusion_depth >= 1, "fusion_depth must be positive");
  require(mask_rate > 0.0f && mask_rate < 1.0f, "mask_rate must be in (0,1)");
  require(dropout >= 0.0f && dropout < 1.0f, "dropout must be in [0,1)");
  require(lr > 0.0f, "lr must be positive");
  require(warmup_steps >= 0, "warmup_steps must be >= 0");
  require(max_steps >= 0, "max_steps must be >= 0");
  require(max_steps == 0 || warmup_steps < max_steps, "warmup_steps must be < max_steps");
  require(batch_size >= 1, "batch_size must be positive");
}

namespace {

json to_ordered_json(const ModelConfig& c) {
  json j;
  j["d"] = c.d;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["cross_heads"] = c.cross_heads;
  j["n_special"] = c.n_special;
  j["seq_len"] = c.seq_len;
  j["max_pos"] = c.max_pos;
  j["m_max"] = c.m_max;
  j["vocab_size"] = c.vocab_size;
  j["min_count"] = c.min_count;
  j["cross_depth"] = c.cross_depth;
  j["fusion_depth"] = c.fusion_depth;
  j["mask_rate"] = c.mask_rate;
  j["dropout"] = c.dropout;
  j["lr"] = c.lr;
  j["warmup_steps"] = c.warmup_steps;
  j["max_steps"] = c.max_steps;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["mode"] = mode_to_string(c.mode);
  return j;
}

}  // namespace

ModelConfig config_from_json(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  ModelConfig c;
  try {
    if (j.contains("d")) c.d = j["d"].get<int>();
    if (j.contains("layers")) c.layers = j["layers"].get<int>();
    if (j.contains("heads")) c.heads = j["heads"].get<int>();
    if (j.contains("cross_heads")) c.cross_heads = j["cross_heads"].get<int>();
    if (j.contains("n_special")) c.n_special = j["n_special"].get<int>();
    if (j.contains("seq_len")) c.seq_len = j["seq_len"].get<int>();
    if (j.contains("max_pos")) c.max_pos = j["max_pos"].get<int>();
    if (j.contains("m_max")) c.m_max = j["m_max"].get<int>();
    if (j.contains("vocab_size")) c.vocab_size = j["vocab_size"].get<int>();
    if (j.contains("min_count")) c.min_count = j["min_count"].get<int>();
    if (j.contains("cross_depth")) c.cross_depth = j["cross_depth"].get<int>();
    if (j.contains("fusion_depth")) c.fusion_depth = j["fusion_depth"].get<int>();
    if (j.contains("mask_rate")) c.mask_rate = j["mask_rate"].get<float>();
    if (j.contains("dropout")) c.dropout = j["dropout"].get<float>();
    if (j.contains("lr")) c.lr = j["lr"].get<float>();
    if (j.contains("warmup_steps")) c.warmup_steps = j["warmup_steps"].get<int64_t>();
    if (j.contains("max_steps")) c.max_steps = j["max_steps"].get<int64_t>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<uint64_t>();
    if (j.contains("mode")) c.mode = mode_from_string(j["mode"].get<std::string>());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad field type: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_to_json(const ModelConfig& cfg) { return to_ordered_json(cfg).dump(2); }

ModelConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

uint64_t fnv1a64(const void* data, size_t len, uint64_t h) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::string config_hash(const ModelConfig& cfg) {
  const std::string canon = to_ordered_json(cfg).dump();
  return hex64(fnv1a64(canon.data(), canon.size()));
}

}  // namespace crossenc
