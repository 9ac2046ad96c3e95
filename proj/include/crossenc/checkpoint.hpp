#pragma once

#include <string>
#include <vector>

#include "crossenc/adam.hpp"
#include "crossenc/corpus.hpp"
#include "crossenc/crossnet.hpp"

namespace crossenc {

// Training-loop state that must survive a save/load round trip for runs to
// continue bit-identically.
struct TrainState {
  int64_t step = 0;
  std::string data_rng;     // serialized stream states
  std::string dropout_rng;
};

struct LoadedCheckpoint {
  Model model;
  Vocab vocab;
  std::vector<Var> extra_params;  // task heads etc., named as saved
  bool has_adam = false;
  Adam::State adam;
  TrainState train;
};

// Single-file format: magic + version, a JSON manifest (config, vocabulary,
// parameter names/shapes, rng states), then raw little-endian float blobs in
// manifest order, then optimizer moments when present. Reload reproduces
// forward outputs bit-identically.
void save_checkpoint(const std::string& path, const Model& model, const Vocab& vocab,
                     const std::vector<Var>& extra_params = {}, const Adam* opt = nullptr,
                     const TrainState* train = nullptr);

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace crossenc
