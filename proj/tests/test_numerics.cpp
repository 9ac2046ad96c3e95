#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "crossenc/autograd.hpp"
#include "crossenc/errors.hpp"
#include "crossenc/rng.hpp"
#include "crossenc/tensor.hpp"

using namespace crossenc;

namespace {

// Central-difference gradient of a scalar graph w.r.t. one leaf, h per entry.
Tensor fd_grad(const std::function<Var()>& forward, const Var& leaf, float h = 1e-2f) {
  Tensor g(leaf->value.rows(), leaf->value.cols());
  for (size_t i = 0; i < leaf->value.data.size(); ++i) {
    const float keep = leaf->value.data[i];
    leaf->value.data[i] = keep + h;
    const double up = forward()->value.data[0];
    leaf->value.data[i] = keep - h;
    const double down = forward()->value.data[0];
    leaf->value.data[i] = keep;
    g.data[i] = static_cast<float>((up - down) / (2.0 * h));
  }
  return g;
}

double norm_rel_err(const Tensor& a, const Tensor& b) {
  double num = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    num += d * d;
    na += static_cast<double>(a.data[i]) * a.data[i];
    nb += static_cast<double>(b.data[i]) * b.data[i];
  }
  return std::sqrt(num) / (std::sqrt(na) + std::sqrt(nb) + 1e-30);
}

void check_grad(const std::function<Var()>& forward, const Var& leaf, double tol = 2e-3) {
  auto loss = forward();
  leaf->zero_grad();
  backward(loss);
  REQUIRE(!leaf->grad.empty());
  const Tensor analytic = leaf->grad;
  const Tensor numeric = fd_grad(forward, leaf);
  CHECK(norm_rel_err(analytic, numeric) < tol);
}

Var weighted_sum(const Var& x, uint64_t seed) {
  Rng rng(seed);
  auto w = make_const(Tensor::randn(x->value.rows(), x->value.cols(), 1.0f, rng));
  return sum_all(mul(x, w));
}

}  // namespace

TEST_CASE("rng determinism and serialization") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(7);
  c.uniform();
  c.normal(0.0f, 1.0f);
  const std::string state = c.serialize();
  Rng d(0);
  d.deserialize(state);
  for (int i = 0; i < 50; ++i) CHECK(c.next_u64() == d.next_u64());
}

TEST_CASE("rng uniform_int stays in range and covers values") {
  Rng rng(3);
  std::vector<int> seen(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const int v = rng.uniform_int(7);
    REQUIRE(v >= 0);
    REQUIRE(v < 7);
    ++seen[v];
  }
  for (int count : seen) CHECK(count > 700);  // each bucket near 1000
}

TEST_CASE("rng normal moments") {
  Rng rng(11);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = rng.normal(0.0f, 1.0f);
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
}

TEST_CASE("derive_seed separates streams") {
  CHECK(derive_seed(1, "init") != derive_seed(1, "data"));
  CHECK(derive_seed(1, "init") != derive_seed(2, "init"));
  CHECK(derive_seed(1, "drop", 0) != derive_seed(1, "drop", 1));
}

TEST_CASE("tensor shape checks") {
  CHECK_THROWS_AS(Tensor(0, 3), NumericsError);
  CHECK_THROWS_AS(Tensor::from(2, 2, {1.0f}), NumericsError);
  Tensor t = Tensor::from(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(t.at(1, 2) == 6.0f);
  CHECK(t.shape_str() == "[2x3]");
}

TEST_CASE("softmax oracle: logits [ln 2, 0] give [2/3, 1/3]") {
  auto x = make_const(Tensor::from(1, 2, {std::log(2.0f), 0.0f}));
  auto y = softmax_rows(x);
  CHECK(y->value.at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
  CHECK(y->value.at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("softmax rows sum to one and stay finite at extremes") {
  auto x = make_const(Tensor::from(2, 3, {1000.0f, 999.0f, -1000.0f, -5.0f, 0.0f, 5.0f}));
  auto y = softmax_rows(x);
  for (int r = 0; r < 2; ++r) {
    double s = 0;
    for (int c = 0; c < 3; ++c) {
      const float p = y->value.at(r, c);
      REQUIRE(std::isfinite(p));
      s += p;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("softmax rejects non-finite input") {
  Tensor bad = Tensor::from(1, 2, {std::numeric_limits<float>::quiet_NaN(), 0.0f});
  auto x = make_const(bad);
  CHECK_THROWS_AS(softmax_rows(x), NumericsError);
}

TEST_CASE("masked softmax zeroes excluded positions") {
  auto x = make_const(Tensor::from(1, 3, {1.0f, 2.0f, 3.0f}));
  Tensor mask = Tensor::from(1, 3, {0.0f, -1e9f, 0.0f});
  auto y = softmax_rows_masked(x, mask);
  CHECK(y->value.at(0, 1) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(y->value.at(0, 0) + y->value.at(0, 2) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer_norm oracle on [1,2,3,4]") {
  auto x = make_const(Tensor::from(1, 4, {1, 2, 3, 4}));
  auto gamma = make_const(Tensor::full(1, 4, 1.0f));
  auto beta = make_const(Tensor::zeros(1, 4));
  auto y = layer_norm(x, gamma, beta, 0.0f);
  // mean 2.5, population variance 1.25, sigma = 1.1180339887
  CHECK(y->value.at(0, 0) == doctest::Approx(-1.3416408).epsilon(1e-5));
  CHECK(y->value.at(0, 1) == doctest::Approx(-0.4472136).epsilon(1e-5));
  CHECK(y->value.at(0, 2) == doctest::Approx(0.4472136).epsilon(1e-5));
  CHECK(y->value.at(0, 3) == doctest::Approx(1.3416408).epsilon(1e-5));
}

TEST_CASE("gelu oracle at 1.0 and 0.0") {
  auto x = make_const(Tensor::from(1, 2, {1.0f, 0.0f}));
  auto y = gelu(x);
  // exact erf form: 1 * Phi(1) = 0.8413447
  CHECK(y->value.at(0, 0) == doctest::Approx(0.8413447).epsilon(1e-5));
  CHECK(y->value.at(0, 1) == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("cross entropy oracle: uniform logits over 2 classes give ln 2") {
  auto logits = make_const(Tensor::from(1, 2, {0.0f, 0.0f}));
  auto loss = cross_entropy_mean(logits, {0});
  CHECK(loss->value.at(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy skips -1 labels and averages the rest") {
  auto logits = make_const(Tensor::from(3, 2, {0, 0, 5, 0, 0, 5}));
  auto loss = cross_entropy_mean(logits, {-1, 0, 1});
  // Two counted rows, each with the logit-5 class as its label.
  const double expect = -std::log(std::exp(5.0) / (std::exp(5.0) + 1.0));
  CHECK(loss->value.at(0, 0) == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("gradients: elementwise, matmul, broadcast") {
  Rng rng(101);
  auto a = make_param(Tensor::randn(3, 4, 1.0f, rng), "a");
  auto b = make_param(Tensor::randn(3, 4, 1.0f, rng), "b");
  auto w = make_param(Tensor::randn(4, 2, 1.0f, rng), "w");
  auto row = make_param(Tensor::randn(1, 2, 1.0f, rng), "row");

  auto fwd = [&]() {
    auto h = mul(add(a, b), sub(a, scale(b, 0.5f)));
    auto y = add_rowvec(matmul(h, w), row);
    return weighted_sum(y, 55);
  };
  for (const Var& leaf : {a, b, w, row}) check_grad(fwd, leaf);
}

TEST_CASE("gradients: matmul_nt matches matmul against transpose") {
  Rng rng(202);
  auto a = make_param(Tensor::randn(2, 3, 1.0f, rng), "a");
  auto b = make_param(Tensor::randn(4, 3, 1.0f, rng), "b");
  auto fwd = [&]() { return weighted_sum(matmul_nt(a, b), 7); };
  check_grad(fwd, a);
  check_grad(fwd, b);

  // Value check: A B^T computed directly.
  auto y = matmul_nt(a, b);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += a->value.at(r, k) * b->value.at(c, k);
      CHECK(y->value.at(r, c) == doctest::Approx(dot).epsilon(1e-4));
    }
}

TEST_CASE("gradients: softmax, layer_norm, gelu, relu, log") {
  Rng rng(303);
  auto x = make_param(Tensor::randn(3, 5, 1.0f, rng), "x");
  auto gamma = make_param(Tensor::full(1, 5, 1.0f), "gamma");
  auto beta = make_param(Tensor::zeros(1, 5), "beta");

  auto fwd_sm = [&]() { return weighted_sum(softmax_rows(x), 1); };
  check_grad(fwd_sm, x);

  auto fwd_ln = [&]() { return weighted_sum(layer_norm(x, gamma, beta, 1e-5f), 2); };
  check_grad(fwd_ln, x);
  check_grad(fwd_ln, gamma);
  check_grad(fwd_ln, beta);

  auto fwd_g = [&]() { return weighted_sum(gelu(x), 3); };
  check_grad(fwd_g, x);

  auto y = make_param(Tensor::from(2, 2, {0.5f, 1.5f, 2.5f, 0.25f}), "y");
  auto fwd_r = [&]() { return weighted_sum(relu(y), 4); };
  check_grad(fwd_r, y);
  auto fwd_log = [&]() { return weighted_sum(log_clamped(y, 1e-12f), 5); };
  check_grad(fwd_log, y);
}

TEST_CASE("gradients: structural ops") {
  Rng rng(404);
  auto x = make_param(Tensor::randn(4, 3, 1.0f, rng), "x");
  auto z = make_param(Tensor::randn(2, 3, 1.0f, rng), "z");

  auto fwd = [&]() {
    auto top = slice_rows(x, 0, 2);
    auto both = concat_rows({top, z});
    auto wide = concat_cols({both, both});
    auto picked = gather_rows(wide, {3, 0, 3});
    return weighted_sum(flatten_row(picked), 6);
  };
  check_grad(fwd, x);
  check_grad(fwd, z);

  auto fwd_pick = [&]() { return pick(x, 2, 1); };
  check_grad(fwd_pick, x);

  auto fwd_mean = [&]() { return weighted_sum(mean_vars({x, scale(x, 2.0f)}), 8); };
  check_grad(fwd_mean, x);

  auto fwd_cols = [&]() { return weighted_sum(slice_cols(x, 1, 3), 9); };
  check_grad(fwd_cols, x);
}

TEST_CASE("gradients: embedding and cross entropy") {
  Rng rng(505);
  auto table = make_param(Tensor::randn(6, 4, 1.0f, rng), "table");
  const std::vector<int> ids = {1, 4, 1, 0};

  auto fwd = [&]() { return weighted_sum(embedding(table, ids), 10); };
  check_grad(fwd, table);

  auto w = make_param(Tensor::randn(4, 5, 1.0f, rng), "w");
  const std::vector<int> labels = {2, -1, 0, 4};
  auto fwd_ce = [&]() { return cross_entropy_mean(matmul(embedding(table, ids), w), labels); };
  check_grad(fwd_ce, table);
  check_grad(fwd_ce, w);
}

TEST_CASE("embedding rejects out-of-range ids") {
  auto table = make_param(Tensor::zeros(3, 2), "t");
  CHECK_THROWS_AS(embedding(table, {3}), NumericsError);
  CHECK_THROWS_AS(embedding(table, {-1}), NumericsError);
}

TEST_CASE("dropout: identity in eval, inverted scaling in train") {
  Rng rng(606);
  auto x = make_const(Tensor::full(20, 50, 1.0f));
  auto eval = dropout(x, 0.5f, false, rng);
  for (float v : eval->value.data) CHECK(v == 1.0f);

  auto train = dropout(x, 0.5f, true, rng);
  int kept = 0;
  for (float v : train->value.data) {
    REQUIRE((v == 0.0f || v == doctest::Approx(2.0f).epsilon(1e-6)));
    if (v != 0.0f) ++kept;
  }
  CHECK(kept > 350);  // ~500 of 1000 kept
  CHECK(kept < 650);
}

TEST_CASE("dropout gradient flows only through kept units") {
  Rng rng(707);
  auto x = make_param(Tensor::full(5, 5, 1.0f), "x");
  Rng drop(3);
  auto y = dropout(x, 0.4f, true, drop);
  backward(sum_all(y));
  for (size_t i = 0; i < x->value.data.size(); ++i) {
    const float out = y->value.data[i];
    const float g = x->grad.data[i];
    if (out == 0.0f)
      CHECK(g == 0.0f);
    else
      CHECK(g == doctest::Approx(1.0f / 0.6f).epsilon(1e-5));
  }
}

TEST_CASE("backward accumulates over shared subgraphs") {
  auto x = make_param(Tensor::scalar(3.0f), "x");
  auto y = add(mul(x, x), scale(x, 2.0f));  // x^2 + 2x, d/dx = 2x + 2 = 8
  backward(sum_all(y));
  CHECK(x->grad.at(0, 0) == doctest::Approx(8.0f).epsilon(1e-5));
}

TEST_CASE("backward requires scalar loss and detects repeated use") {
  auto x = make_param(Tensor::zeros(2, 2), "x");
  CHECK_THROWS_AS(backward(x), NumericsError);
}

TEST_CASE("no-grad subgraphs skip gradient work") {
  auto c = make_const(Tensor::full(2, 2, 1.5f));
  auto y = mul(c, c);
  backward(sum_all(y));
  CHECK(c->grad.empty());
}
