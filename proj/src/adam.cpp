#include "crossenc/adam.hpp"

#include <cmath>

#include "crossenc/errors.hpp"

namespace crossenc {

float Adam::schedule_lr(int64_t step) const {
  const float peak = cfg_.learning_rate;
  if (cfg_.max_steps <= 0) return peak;
  if (cfg_.warmup_steps > 0 && step <= cfg_.warmup_steps)
    return peak * static_cast<float>(step) / static_cast<float>(cfg_.warmup_steps);
  if (step >= cfg_.max_steps) return 0.0f;
  const int64_t span = cfg_.max_steps - cfg_.warmup_steps;
  return peak * static_cast<float>(cfg_.max_steps - step) / static_cast<float>(span);
}

void Adam::step(const std::vector<Var>& params, float grad_scale) {
  if (st_.m.empty()) {
    st_.m.reserve(params.size());
    st_.v.reserve(params.size());
    for (const auto& p : params) {
      st_.m.push_back(Tensor::zeros(p->value.rows(), p->value.cols()));
      st_.v.push_back(Tensor::zeros(p->value.rows(), p->value.cols()));
    }
  }
  if (st_.m.size() != params.size())
    throw NumericsError("Adam::step: parameter count changed after first step");

  ++step_;
  st_.step = step_;
  const float lr = schedule_lr(step_);
  const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(step_));
  const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(step_));

  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = st_.m[i];
    auto& v = st_.v[i];
    if (!m.same_shape(p->value))
      throw NumericsError("Adam::step: shape mismatch for parameter '" + p->name + "': moment " +
                          m.shape_str() + " vs value " + p->value.shape_str());
    const bool has_grad = !p->grad.empty();
    for (size_t k = 0; k < p->value.data.size(); ++k) {
      const float g = has_grad ? p->grad.data[k] * grad_scale : 0.0f;
      m.data[k] = cfg_.beta1 * m.data[k] + (1.0f - cfg_.beta1) * g;
      v.data[k] = cfg_.beta2 * v.data[k] + (1.0f - cfg_.beta2) * g * g;
      const float m_hat = m.data[k] / bc1;
      const float v_hat = v.data[k] / bc2;
      p->value.data[k] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.epsilon);
    }
  }
}

void zero_grads(const std::vector<Var>& params) {
  for (const auto& p : params) p->zero_grad();
}

void scale_grads(const std::vector<Var>& params, float s) {
  for (const auto& p : params)
    if (!p->grad.empty())
      for (auto& g : p->grad.data) g *= s;
}

}  // namespace crossenc
