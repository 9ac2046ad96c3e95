#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "crossenc/adam.hpp"
#include "crossenc/autograd.hpp"

using namespace crossenc;

TEST_CASE("first step closed form: delta = -lr * g / (|g| + eps)") {
  AdamConfig cfg;
  cfg.learning_rate = 0.1f;
  Adam opt(cfg);

  auto p = make_param(Tensor::from(1, 3, {1.0f, -2.0f, 0.5f}), "p");
  p->ensure_grad() = Tensor::from(1, 3, {0.3f, -0.7f, 0.0f});
  const Tensor before = p->value;
  const Tensor g = p->grad;

  opt.step({p});
  for (int c = 0; c < 3; ++c) {
    const double gv = g.at(0, c);
    const double expect =
        before.at(0, c) - cfg.learning_rate * gv / (std::abs(gv) + cfg.epsilon);
    CHECK(p->value.at(0, c) == doctest::Approx(expect).epsilon(1e-6));
  }
  // Zero gradient leaves the entry untouched.
  CHECK(p->value.at(0, 2) == doctest::Approx(0.5).epsilon(1e-7));
}

TEST_CASE("schedule: warmup then linear decay") {
  AdamConfig cfg;
  cfg.learning_rate = 1.0f;
  cfg.warmup_steps = 10;
  cfg.max_steps = 110;
  Adam opt(cfg);

  CHECK(opt.schedule_lr(1) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(opt.schedule_lr(5) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(opt.schedule_lr(10) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(opt.schedule_lr(60) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(opt.schedule_lr(110) == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("schedule: constant when max_steps is zero, no warmup when zero") {
  AdamConfig cfg;
  cfg.learning_rate = 0.25f;
  Adam opt(cfg);
  CHECK(opt.schedule_lr(1) == doctest::Approx(0.25).epsilon(1e-7));
  CHECK(opt.schedule_lr(100000) == doctest::Approx(0.25).epsilon(1e-7));

  cfg.warmup_steps = 0;
  cfg.max_steps = 100;
  Adam opt2(cfg);
  CHECK(opt2.schedule_lr(1) == doctest::Approx(0.25 * 99.0 / 100.0).epsilon(1e-6));
}

TEST_CASE("adam converges on a quadratic") {
  AdamConfig cfg;
  cfg.learning_rate = 0.05f;
  Adam opt(cfg);
  auto p = make_param(Tensor::from(1, 2, {4.0f, -3.0f}), "p");
  for (int i = 0; i < 800; ++i) {
    zero_grads({p});
    // loss = 0.5 * ||p - [1, 2]||^2, grad = p - [1, 2]
    p->ensure_grad().at(0, 0) = p->value.at(0, 0) - 1.0f;
    p->grad.at(0, 1) = p->value.at(0, 1) - 2.0f;
    opt.step({p});
  }
  CHECK(p->value.at(0, 0) == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(p->value.at(0, 1) == doctest::Approx(2.0).epsilon(1e-2));
}

TEST_CASE("grad_scale averages accumulated gradients") {
  AdamConfig cfg;
  cfg.learning_rate = 0.1f;
  Adam a(cfg), b(cfg);
  auto p1 = make_param(Tensor::scalar(1.0f), "p1");
  auto p2 = make_param(Tensor::scalar(1.0f), "p2");
  p1->ensure_grad() = Tensor::scalar(0.6f);
  p2->ensure_grad() = Tensor::scalar(1.2f);
  a.step({p1});
  b.step({p2}, 0.5f);
  CHECK(p1->value.at(0, 0) == doctest::Approx(p2->value.at(0, 0)).epsilon(1e-7));
}

TEST_CASE("state restore reproduces the continued trajectory") {
  AdamConfig cfg;
  cfg.learning_rate = 0.02f;
  Adam opt(cfg);
  auto p = make_param(Tensor::from(1, 1, {2.0f}), "p");
  auto grad_at = [](float x) { return 2.0f * (x - 0.5f); };

  for (int i = 0; i < 5; ++i) {
    zero_grads({p});
    p->ensure_grad().at(0, 0) = grad_at(p->value.at(0, 0));
    opt.step({p});
  }
  const Adam::State snap = opt.state();
  const float v_snap = p->value.at(0, 0);

  std::vector<float> rest;
  for (int i = 0; i < 5; ++i) {
    zero_grads({p});
    p->ensure_grad().at(0, 0) = grad_at(p->value.at(0, 0));
    opt.step({p});
    rest.push_back(p->value.at(0, 0));
  }

  Adam opt2(cfg);
  opt2.restore(snap);
  p->value.at(0, 0) = v_snap;
  for (int i = 0; i < 5; ++i) {
    zero_grads({p});
    p->ensure_grad().at(0, 0) = grad_at(p->value.at(0, 0));
    opt2.step({p});
    CHECK(p->value.at(0, 0) == rest[static_cast<size_t>(i)]);
  }
}
