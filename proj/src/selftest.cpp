#include "crossenc/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <ostream>
#include <sstream>

#include "crossenc/checkpoint.hpp"
#include "crossenc/crossnet.hpp"
#include "crossenc/finetune.hpp"
#include "crossenc/retrieval.hpp"

namespace crossenc {

namespace {

ModelConfig toy_config(uint64_t seed) {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.cross_heads = 2;
  cfg.n_special = 2;
  cfg.seq_len = 6;
  cfg.max_pos = 16;
  cfg.m_max = 3;
  cfg.vocab_size = 50;
  cfg.dropout = 0.0f;
  cfg.seed = seed;
  return cfg;
}

MaskedSequence plain_seq(std::vector<int> ids, int offset) {
  MaskedSequence s;
  s.labels.assign(ids.size(), -1);
  s.input = std::move(ids);
  s.offset = offset;
  return s;
}

MaskedBatch toy_batch() {
  MaskedBatch b;
  auto s0 = plain_seq({10, 1, 12, 13}, 0);
  s0.labels[1] = 11;
  s0.n_masked = 1;
  auto s1 = plain_seq({20, 21, 1}, 4);
  s1.labels[2] = 22;
  s1.n_masked = 1;
  auto s2 = plain_seq({30, 31, 32, 1, 34}, 8);
  s2.labels[3] = 33;
  s2.n_masked = 1;
  b.sequences = {s0, s1, s2};
  return b;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data[i]) - b.data[i]));
  return m;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

CheckResult result(const std::string& name, bool pass, const std::string& detail) {
  return {name, pass, detail};
}

}  // namespace

CheckResult check_softmax_oracle() {
  auto x = make_const(Tensor::from(1, 2, {std::log(2.0f), 0.0f}));
  auto y = softmax_rows(x);
  const double e0 = std::abs(y->value.at(0, 0) - 2.0 / 3.0);
  const double e1 = std::abs(y->value.at(0, 1) - 1.0 / 3.0);
  const double err = std::max(e0, e1);
  return result("softmax-oracle", err < 1e-6, "max err " + num(err));
}

CheckResult check_layernorm_oracle() {
  auto x = make_const(Tensor::from(1, 4, {1, 2, 3, 4}));
  auto g = make_const(Tensor::full(1, 4, 1.0f));
  auto b = make_const(Tensor::zeros(1, 4));
  auto y = layer_norm(x, g, b, 0.0f);
  const float expect[4] = {-1.3416408f, -0.4472136f, 0.4472136f, 1.3416408f};
  double err = 0;
  for (int i = 0; i < 4; ++i) err = std::max(err, std::abs(double(y->value.at(0, i)) - expect[i]));
  return result("layernorm-oracle", err < 1e-5, "max err " + num(err));
}

CheckResult check_cross_attend_oracle() {
  const int d = 2;
  Tensor eye = Tensor::zeros(d, d);
  eye.at(0, 0) = eye.at(1, 1) = 1.0f;
  CrossLayerParams p;
  p.wq = make_param(eye, "wq");
  p.wk = make_param(eye, "wk");
  p.wv = make_param(eye, "wv");
  p.bv = make_param(Tensor::zeros(1, d), "bv");
  p.wo = make_param(eye, "wo");
  p.bo = make_param(Tensor::zeros(1, d), "bo");
  p.ln1_g = make_param(Tensor::full(1, d, 1.0f), "g1");
  p.ln1_b = make_param(Tensor::zeros(1, d), "b1");
  p.ln2_g = make_param(Tensor::full(1, d, 1.0f), "g2");
  p.ln2_b = make_param(Tensor::zeros(1, d), "b2");
  p.ff1_w = make_param(Tensor::zeros(d, 4 * d), "f1");
  p.ff1_b = make_param(Tensor::zeros(1, 4 * d), "fb1");
  p.ff2_w = make_param(Tensor::zeros(4 * d, d), "f2");
  p.ff2_b = make_param(Tensor::zeros(1, d), "fb2");

  ForwardCtx ctx;
  auto f = make_const(Tensor::from(2, 2, {1, 0, 0, 1}));
  auto [c, alphas] = cross_attend({p}, f, 1, ctx);
  // softmax([1/sqrt(2), 0]) = [0.66977, 0.33023]
  const double err = std::max(std::abs(alphas[0]->value.at(0, 0) - 0.669773),
                              std::abs(alphas[0]->value.at(0, 1) - 0.330227));
  return result("cross-attend-oracle", err < 1e-3, "max err " + num(err));
}

CheckResult check_adam_first_step() {
  AdamConfig cfg;
  cfg.learning_rate = 0.1f;
  Adam opt(cfg);
  auto p = make_param(Tensor::from(1, 3, {1.0f, -2.0f, 0.5f}), "p");
  p->ensure_grad() = Tensor::from(1, 3, {0.3f, -0.7f, 0.0f});
  const Tensor before = p->value;
  const Tensor g = p->grad;
  opt.step({p});
  double err = 0;
  for (int i = 0; i < 3; ++i) {
    const double gv = g.at(0, i);
    const double expect = before.at(0, i) - 0.1 * gv / (std::abs(gv) + double(cfg.epsilon));
    err = std::max(err, std::abs(p->value.at(0, i) - expect));
  }
  return result("adam-first-step", err < 1e-6, "max err " + num(err));
}

CheckResult check_grad_small() {
  Rng rng(4242);
  auto table = make_param(Tensor::randn(6, 4, 1.0f, rng), "table");
  auto w = make_param(Tensor::randn(4, 5, 1.0f, rng), "w");
  auto g = make_param(Tensor::full(1, 4, 1.0f), "g");
  auto b = make_param(Tensor::zeros(1, 4), "b");
  const std::vector<int> ids = {1, 4, 2, 0};
  const std::vector<int> labels = {2, -1, 0, 4};

  auto forward = [&]() {
    auto x = layer_norm(embedding(table, ids), g, b, 1e-5f);
    return cross_entropy_mean(matmul(x, w), labels);
  };

  double worst = 0;
  for (const Var& leaf : {table, w, g, b}) {
    auto loss = forward();
    leaf->zero_grad();
    backward(loss);
    double num_sq = 0, den_a = 0, den_n = 0;
    for (size_t i = 0; i < leaf->value.data.size(); ++i) {
      const float keep = leaf->value.data[i];
      const float h = 1e-2f;
      leaf->value.data[i] = keep + h;
      const double up = forward()->value.at(0, 0);
      leaf->value.data[i] = keep - h;
      const double down = forward()->value.at(0, 0);
      leaf->value.data[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double an = leaf->grad.data[i];
      num_sq += (fd - an) * (fd - an);
      den_a += an * an;
      den_n += fd * fd;
    }
    worst = std::max(worst, std::sqrt(num_sq) / (std::sqrt(den_a) + std::sqrt(den_n) + 1e-30));
  }
  return result("grad-small-graph", worst < 2e-3, "worst group rel err " + num(worst));
}

CheckResult check_alpha_row_sums(uint64_t seed) {
  Rng rng(derive_seed(seed, "alpha"));
  auto model = Model::init(toy_config(seed), rng);
  ForwardCtx ctx;
  auto ce = cross_forward(model, toy_batch(), ctx);
  double worst = 0;
  for (const auto& a : ce.attn.mats)
    for (int r = 0; r < a->value.rows(); ++r) {
      double s = 0;
      for (int c = 0; c < a->value.cols(); ++c) s += a->value.at(r, c);
      worst = std::max(worst, std::abs(s - 1.0));
    }
  return result("alpha-row-sums", worst <= 1e-6, "worst |sum-1| " + num(worst));
}

CheckResult check_e_slice(uint64_t seed) {
  Rng rng(derive_seed(seed, "eslice"));
  auto model = Model::init(toy_config(seed), rng);
  ForwardCtx ctx;
  auto encs = encode_batch(model.enc, model.cfg, toy_batch(), ctx);
  double worst = 0;
  for (const auto& enc : encs)
    for (int n = 0; n < model.cfg.n_special; ++n)
      for (int c = 0; c < model.cfg.d; ++c)
        worst = std::max(worst,
                         std::abs(double(enc.e->value.at(n, c)) - enc.h->value.at(n, c)));
  return result("e-is-h-slice", worst == 0.0, "max diff " + num(worst));
}

CheckResult check_padding_invariance(uint64_t seed) {
  Rng rng(derive_seed(seed, "pad"));
  auto model = Model::init(toy_config(seed), rng);
  ForwardCtx ctx;
  auto seq = plain_seq({30, 31, 32, 33}, 2);
  auto bare = encode(model.enc, model.cfg, seq, ctx);
  auto padded = encode(model.enc, model.cfg, seq, ctx, 6);
  const double diff = max_abs_diff(bare.h->value, padded.h->value);
  return result("padding-invariance", diff <= 1e-5, "max diff " + num(diff));
}

CheckResult check_permutation_equivariance(uint64_t seed) {
  Rng rng(derive_seed(seed, "perm"));
  auto model = Model::init(toy_config(seed), rng);
  ForwardCtx ctx;
  MaskedBatch fwd = toy_batch();
  MaskedBatch rev = fwd;
  std::swap(rev.sequences[0], rev.sequences[2]);
  const int perm[3] = {2, 1, 0};

  auto a = pretrain_forward(model, fwd, ctx);
  auto b = pretrain_forward(model, rev, ctx);
  double worst = std::abs(double(a.loss->value.at(0, 0)) - b.loss->value.at(0, 0));
  for (size_t i = 0; i < a.attn.mats.size(); ++i)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        worst = std::max(worst, std::abs(double(a.attn.mats[i]->value.at(r, c)) -
                                         b.attn.mats[i]->value.at(perm[r], perm[c])));
  return result("permutation-equivariance", worst <= 1e-5, "max diff " + num(worst));
}

CheckResult check_softmax_logit_ordering(uint64_t seed, int cases) {
  Rng rng(derive_seed(seed, "order"));
  int bad = 0;
  for (int t = 0; t < cases; ++t) {
    const int m = 2 + rng.uniform_int(19);
    Tensor logits = Tensor::randn(1, m, 3.0f, rng);
    Tensor probs = logits;
    softmax_rows_inplace(probs);
    std::vector<int> by_logit(static_cast<size_t>(m)), by_prob(static_cast<size_t>(m));
    std::iota(by_logit.begin(), by_logit.end(), 0);
    std::iota(by_prob.begin(), by_prob.end(), 0);
    auto cmp = [](const Tensor& t) {
      return [&t](int a, int b) {
        if (t.at(0, a) != t.at(0, b)) return t.at(0, a) > t.at(0, b);
        return a < b;
      };
    };
    std::stable_sort(by_logit.begin(), by_logit.end(), cmp(logits));
    std::stable_sort(by_prob.begin(), by_prob.end(), cmp(probs));
    if (by_logit != by_prob) ++bad;
  }
  return result("softmax-vs-logit-order", bad == 0,
                std::to_string(bad) + " of " + std::to_string(cases) + " orderings disagree");
}

CheckResult check_mean_attention_stochastic(uint64_t seed) {
  Rng rng(derive_seed(seed, "meanattn"));
  auto model = Model::init(toy_config(seed), rng);
  ForwardCtx ctx;
  auto ce = cross_forward(model, toy_batch(), ctx);
  auto mean = mean_attention(ce.attn);
  double worst = 0;
  for (int r = 0; r < mean->value.rows(); ++r) {
    double s = 0;
    for (int c = 0; c < mean->value.cols(); ++c) {
      if (mean->value.at(r, c) < 0) worst = 1;
      s += mean->value.at(r, c);
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return result("mean-attention-stochastic", worst <= 1e-6, "worst |sum-1| " + num(worst));
}

CheckResult check_checkpoint_roundtrip(uint64_t seed) {
  namespace fs = std::filesystem;
  Rng rng(derive_seed(seed, "ckpt"));
  auto model = Model::init(toy_config(seed), rng);
  Vocab vocab = Vocab::build({"alpha beta gamma delta"}, 1, 50, model.cfg.n_special);
  const auto path =
      (fs::temp_directory_path() / ("crossenc_selftest_" + std::to_string(seed) + ".ckpt"))
          .string();
  save_checkpoint(path, model, vocab);
  auto loaded = load_checkpoint(path);
  fs::remove(path);

  ForwardCtx ctx;
  auto a = pretrain_forward(model, toy_batch(), ctx);
  auto b = pretrain_forward(loaded.model, toy_batch(), ctx);
  const bool same = a.loss->value.at(0, 0) == b.loss->value.at(0, 0);
  return result("checkpoint-roundtrip", same,
                same ? "loss bits identical" : "loss differs after reload");
}

CheckResult check_recall_monte_carlo(uint64_t seed) {
  Rng rng(derive_seed(seed, "recall"));
  const int queries = 1000, pool = 20;
  std::vector<int> gold_ranks;
  for (int q = 0; q < queries; ++q) {
    // Random scores; gold is candidate 0. Rank = 1 + better candidates.
    const double gold_score = rng.uniform();
    int better = 0;
    for (int c = 1; c < pool; ++c)
      if (rng.uniform() > gold_score) ++better;
    gold_ranks.push_back(1 + better);
  }
  const double r5 = recall_at_k(gold_ranks, 5);
  const bool pass = r5 > 0.20 && r5 < 0.30;
  return result("recall-monte-carlo", pass, "recall@5 " + num(r5) + " (expect ~0.25)");
}

std::vector<CheckResult> run_selftests(uint64_t seed) {
  std::vector<CheckResult> r;
  r.push_back(check_softmax_oracle());
  r.push_back(check_layernorm_oracle());
  r.push_back(check_cross_attend_oracle());
  r.push_back(check_adam_first_step());
  r.push_back(check_grad_small());
  r.push_back(check_alpha_row_sums(seed));
  r.push_back(check_e_slice(seed));
  r.push_back(check_padding_invariance(seed));
  r.push_back(check_permutation_equivariance(seed));
  r.push_back(check_softmax_logit_ordering(seed, 1000));
  r.push_back(check_mean_attention_stochastic(seed));
  r.push_back(check_checkpoint_roundtrip(seed));
  r.push_back(check_recall_monte_carlo(seed));
  return r;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

void print_results(const std::vector<CheckResult>& results, std::ostream& os) {
  for (const auto& r : results)
    os << (r.pass ? "[ok]   " : "[fail] ") << r.name << ": " << r.detail << "\n";
}

}  // namespace crossenc
