#pragma once

#include <cstdint>
#include <vector>

#include "crossenc/autograd.hpp"
#include "crossenc/tensor.hpp"

namespace crossenc {

struct AdamConfig {
  float learning_rate = 5e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float epsilon = 1e-8f;
  // Linear warmup to the peak rate, then linear decay to zero at max_steps.
  // warmup_steps == 0 skips warmup; max_steps == 0 means a constant rate.
  int64_t warmup_steps = 0;
  int64_t max_steps = 0;
};

// Bias-corrected Adam over a fixed parameter list. Moment buffers are
// allocated per parameter on first step and match shapes thereafter.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  float schedule_lr(int64_t step) const;  // effective rate at a given 1-based step

  // Applies one update from each parameter's accumulated grad. Parameters with
  // no grad buffer are treated as zero-gradient. grad_scale multiplies every
  // gradient first (used for averaging accumulated mini-batches).
  void step(const std::vector<Var>& params, float grad_scale = 1.0f);

  int64_t steps_taken() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  // Checkpoint access.
  struct State {
    int64_t step = 0;
    std::vector<Tensor> m, v;
  };
  State& state() { return st_; }
  const State& state() const { return st_; }
  void restore(State st) { st_ = std::move(st); step_ = st_.step; }

 private:
  AdamConfig cfg_;
  State st_;
  int64_t step_ = 0;
};

void zero_grads(const std::vector<Var>& params);
void scale_grads(const std::vector<Var>& params, float s);

}  // namespace crossenc
