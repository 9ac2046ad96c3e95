#pragma once

#include <cstdint>
#include <string>

namespace crossenc {

enum class Mode { cross, mlm_only };

std::string mode_to_string(Mode m);
Mode mode_from_string(const std::string& s);

// All architecture and training hyperparameters. Serialized as flat JSON with
// exactly these key names; CLI flags override file values.
struct ModelConfig {
  int d = 64;             // hidden size
  int layers = 4;         // encoder depth
  int heads = 4;          // encoder / fusion attention heads
  int cross_heads = 4;    // heads of the cross-sequence attention
  int n_special = 3;      // N: special tokens pre-appended per sequence
  int seq_len = 64;       // L: max words per short sequence
  int max_pos = 564;      // word position ids span 0..max_pos
  int m_max = 8;          // max sequences per sample
  int vocab_size = 8192;  // cap including reserved ids
  int min_count = 1;      // vocabulary frequency cutoff
  int cross_depth = 1;    // cross-sequence layers per special token
  int fusion_depth = 1;   // fusion layers over merged states
  float mask_rate = 0.15f;
  float dropout = 0.1f;
  float lr = 5e-4f;
  int64_t warmup_steps = 10000;
  int64_t max_steps = 125000;
  int batch_size = 8;  // documents per optimizer step
  uint64_t seed = 1234;
  Mode mode = Mode::cross;

  int head_dim() const { return d / heads; }
  int cross_head_dim() const { return d / cross_heads; }
  int reserved_ids() const { return 3 + n_special; }  // PAD, MASK, UNK, S_0..S_{N-1}

  void validate() const;  // throws ConfigError
};

ModelConfig config_from_json(const std::string& json_text);
std::string config_to_json(const ModelConfig& cfg);
ModelConfig load_config_file(const std::string& path);

// FNV-1a over the canonical JSON form; logged with every run.
std::string config_hash(const ModelConfig& cfg);

uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(uint64_t v);

}  // namespace crossenc
