#include "crossenc/crossnet.hpp"

#include <string>

#include "crossenc/errors.hpp"
#include "crossenc/log.hpp"

namespace crossenc {

namespace {

constexpr float kLnEps = 1e-5f;

// Fan-in scaled, matching the encoder's init.
Var weight(int rows, int cols, Rng& rng, const std::string& name) {
  const float std = 1.0f / std::sqrt(static_cast<float>(rows));
  return make_param(Tensor::randn(rows, cols, std, rng), name);
}

Var zeros_param(int rows, int cols, const std::string& name) {
  return make_param(Tensor::zeros(rows, cols), name);
}

Var ones_param(int cols, const std::string& name) {
  return make_param(Tensor::full(1, cols, 1.0f), name);
}

CrossLayerParams init_cross_layer(const ModelConfig& cfg, Rng& rng, const std::string& prefix) {
  CrossLayerParams p;
  const int d = cfg.d;
  p.wq = weight(d, d, rng, prefix + ".wq");
  p.wk = weight(d, d, rng, prefix + ".wk");
  p.wv = weight(d, d, rng, prefix + ".wv");
  p.bv = zeros_param(1, d, prefix + ".bv");
  p.wo = weight(d, d, rng, prefix + ".wo");
  p.bo = zeros_param(1, d, prefix + ".bo");
  p.ln1_g = ones_param(d, prefix + ".ln1_g");
  p.ln1_b = zeros_param(1, d, prefix + ".ln1_b");
  p.ln2_g = ones_param(d, prefix + ".ln2_g");
  p.ln2_b = zeros_param(1, d, prefix + ".ln2_b");
  p.ff1_w = weight(d, 4 * d, rng, prefix + ".ff1_w");
  p.ff1_b = zeros_param(1, 4 * d, prefix + ".ff1_b");
  p.ff2_w = weight(4 * d, d, rng, prefix + ".ff2_w");
  p.ff2_b = zeros_param(1, d, prefix + ".ff2_b");
  return p;
}

EncoderLayerParams init_fusion_layer(const ModelConfig& cfg, Rng& rng, const std::string& prefix) {
  EncoderLayerParams p;
  const int d = cfg.d;
  p.wq = weight(d, d, rng, prefix + ".wq");
  p.bq = zeros_param(1, d, prefix + ".bq");
  p.wk = weight(d, d, rng, prefix + ".wk");
  p.bk = zeros_param(1, d, prefix + ".bk");
  p.wv = weight(d, d, rng, prefix + ".wv");
  p.bv = zeros_param(1, d, prefix + ".bv");
  p.wo = weight(d, d, rng, prefix + ".wo");
  p.bo = zeros_param(1, d, prefix + ".bo");
  p.ln1_g = ones_param(d, prefix + ".ln1_g");
  p.ln1_b = zeros_param(1, d, prefix + ".ln1_b");
  p.ln2_g = ones_param(d, prefix + ".ln2_g");
  p.ln2_b = zeros_param(1, d, prefix + ".ln2_b");
  p.ff1_w = weight(d, 4 * d, rng, prefix + ".ff1_w");
  p.ff1_b = zeros_param(1, 4 * d, prefix + ".ff1_b");
  p.ff2_w = weight(4 * d, d, rng, prefix + ".ff2_w");
  p.ff2_b = zeros_param(1, d, prefix + ".ff2_b");
  return p;
}

Var maybe_dropout(const Var& x, const ForwardCtx& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0f) return x;
  return dropout(x, ctx.dropout, true, *ctx.rng);
}

// Post-norm feed-forward half-block shared by cross and fusion layers.
Var ffn_postnorm(const Var& x, const Var& ln_g, const Var& ln_b, const Var& w1, const Var& b1,
                 const Var& w2, const Var& b2, const ForwardCtx& ctx) {
  auto ff = add_rowvec(matmul(gelu(add_rowvec(matmul(x, w1), b1)), w2), b2);
  return layer_norm(add(x, maybe_dropout(ff, ctx)), ln_g, ln_b, kLnEps);
}

Var fusion_block(const Var& x, const EncoderLayerParams& p, int n_heads, const ForwardCtx& ctx) {
  auto q = add_rowvec(matmul(x, p.wq), p.bq);
  auto k = add_rowvec(matmul(x, p.wk), p.bk);
  auto v = add_rowvec(matmul(x, p.wv), p.bv);
  auto heads_out = attention_heads(q, k, v, n_heads, nullptr, ctx);
  auto attn = maybe_dropout(add_rowvec(matmul(heads_out, p.wo), p.bo), ctx);
  auto x1 = layer_norm(add(x, attn), p.ln1_g, p.ln1_b, kLnEps);
  return ffn_postnorm(x1, p.ln2_g, p.ln2_b, p.ff1_w, p.ff1_b, p.ff2_w, p.ff2_b, ctx);
}

}  // namespace

CrossParams CrossParams::init(const ModelConfig& cfg, Rng& rng) {
  CrossParams p;
  if (cfg.mode == Mode::cross) {
    p.per_token.resize(static_cast<size_t>(cfg.n_special));
    for (int n = 0; n < cfg.n_special; ++n)
      for (int l = 0; l < cfg.cross_depth; ++l)
        p.per_token[static_cast<size_t>(n)].push_back(init_cross_layer(
            cfg, rng, "cross." + std::to_string(n) + "." + std::to_string(l)));
    for (int l = 0; l < cfg.fusion_depth; ++l)
      p.fusion.push_back(init_fusion_layer(cfg, rng, "fuse." + std::to_string(l)));
  }
  p.vocab_bias = zeros_param(1, cfg.vocab_size, "vocab_bias");
  return p;
}

void CrossParams::collect(std::vector<Var>& out) const {
  for (const auto& stack : per_token)
    for (const auto& p : stack)
      out.insert(out.end(), {p.wq, p.wk, p.wv, p.bv, p.wo, p.bo, p.ln1_g, p.ln1_b, p.ln2_g,
                             p.ln2_b, p.ff1_w, p.ff1_b, p.ff2_w, p.ff2_b});
  for (const auto& p : fusion)
    out.insert(out.end(), {p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo, p.ln1_g, p.ln1_b,
                           p.ln2_g, p.ln2_b, p.ff1_w, p.ff1_b, p.ff2_w, p.ff2_b});
  out.push_back(vocab_bias);
}

Model Model::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.enc = EncoderParams::init(cfg, rng);
  m.cross = CrossParams::init(cfg, rng);
  return m;
}

std::vector<Var> Model::param_list() const {
  std::vector<Var> out;
  enc.collect(out);
  cross.collect(out);
  return out;
}

Var stack_special(const std::vector<EncodedSequence>& encs, int n) {
  std::vector<Var> rows;
  rows.reserve(encs.size());
  for (const auto& e : encs) rows.push_back(slice_rows(e.e, n, n + 1));
  return rows.size() == 1 ? rows[0] : concat_rows(rows);
}

std::pair<Var, std::vector<Var>> cross_attend(const std::vector<CrossLayerParams>& layers,
                                              const Var& f_n, int n_heads,
                                              const ForwardCtx& ctx) {
  Var x = f_n;
  std::vector<Var> alphas;
  for (const auto& p : layers) {
    auto q = matmul(x, p.wq);
    auto k = matmul(x, p.wk);
    auto v = add_rowvec(matmul(x, p.wv), p.bv);
    auto heads_out = attention_heads(q, k, v, n_heads, nullptr, ctx, &alphas);
    auto attn = maybe_dropout(add_rowvec(matmul(heads_out, p.wo), p.bo), ctx);
    auto x1 = layer_norm(add(x, attn), p.ln1_g, p.ln1_b, kLnEps);
    x = ffn_postnorm(x1, p.ln2_g, p.ln2_b, p.ff1_w, p.ff1_b, p.ff2_w, p.ff2_b, ctx);
  }
  return {x, std::move(alphas)};
}

Var fuse_sequence(const std::vector<Var>& c_list, const EncodedSequence& enc, int m) {
  const int n = static_cast<int>(c_list.size());
  std::vector<Var> parts;
  parts.reserve(static_cast<size_t>(n) + 1);
  for (int i = 0; i < n; ++i) parts.push_back(slice_rows(c_list[static_cast<size_t>(i)], m, m + 1));
  parts.push_back(slice_rows(enc.h, n, n + enc.len));
  return concat_rows(parts);
}

namespace {

// Tied-projection vocabulary logits for a stack of hidden rows.
Var vocab_logits(const Model& model, const Var& rows) {
  return add_rowvec(matmul_nt(rows, model.enc.tok_emb), model.cross.vocab_bias);
}

// Collects hidden rows at masked word positions plus their labels.
void gather_masked(const Var& states, const MaskedSequence& seq, int n_special,
                   std::vector<Var>& rows, std::vector<int>& labels) {
  for (int i = 0; i < seq.len(); ++i) {
    const int label = seq.labels[static_cast<size_t>(i)];
    if (label == -1) continue;
    rows.push_back(slice_rows(states, n_special + i, n_special + i + 1));
    labels.push_back(label);
  }
}

}  // namespace

CrossEncoding cross_forward(const Model& model, const MaskedBatch& batch, const ForwardCtx& ctx) {
  if (model.cfg.mode != Mode::cross)
    throw ConfigError("cross_forward: model is in mlm-only mode");
  CrossEncoding out;
  out.encs = encode_batch(model.enc, model.cfg, batch, ctx);
  const int m = static_cast<int>(out.encs.size());
  out.attn.m = m;
  out.attn.n_special = model.cfg.n_special;
  out.attn.heads = model.cfg.cross_heads;
  out.attn.depth = model.cfg.cross_depth;
  for (int n = 0; n < model.cfg.n_special; ++n) {
    auto f_n = stack_special(out.encs, n);
    auto [c_n, alphas] = cross_attend(model.cross.per_token[static_cast<size_t>(n)], f_n,
                                      model.cfg.cross_heads, ctx);
    out.c_list.push_back(c_n);
    for (auto& a : alphas) out.attn.mats.push_back(std::move(a));
  }
  return out;
}

PretrainOutput pretrain_forward(const Model& model, const MaskedBatch& batch,
                                const ForwardCtx& ctx) {
  PretrainOutput out;
  out.tokens_masked = batch.total_masked();

  std::vector<Var> rows;
  std::vector<int> labels;
  if (model.cfg.mode == Mode::cross) {
    CrossEncoding ce = cross_forward(model, batch, ctx);
    out.attn = std::move(ce.attn);
    out.encs = std::move(ce.encs);
    for (size_t m = 0; m < batch.sequences.size(); ++m) {
      auto o_m = fuse_sequence(ce.c_list, out.encs[m], static_cast<int>(m));
      for (const auto& layer : model.cross.fusion)
        o_m = fusion_block(o_m, layer, model.cfg.heads, ctx);
      // Fused rows sit at the same offsets: N special rows, then words.
      gather_masked(o_m, batch.sequences[m], model.cfg.n_special, rows, labels);
    }
  } else {
    out.encs = encode_batch(model.enc, model.cfg, batch, ctx);
    for (size_t m = 0; m < batch.sequences.size(); ++m)
      gather_masked(out.encs[m].h, batch.sequences[m], model.cfg.n_special, rows, labels);
  }

  if (rows.empty()) {
    log_warn("pretrain_forward: batch has no masked tokens, L_mask = 0");
    out.loss = make_const(Tensor::scalar(0.0f));
    return out;
  }
  auto stacked = rows.size() == 1 ? rows[0] : concat_rows(rows);
  out.loss = cross_entropy_mean(vocab_logits(model, stacked), labels);
  return out;
}

float pretrain_step(Model& model, const MaskedBatch& batch, Adam& opt,
                    const std::vector<Var>& params, Rng& dropout_rng) {
  ForwardCtx ctx{true, model.cfg.dropout, &dropout_rng};
  auto out = pretrain_forward(model, batch, ctx);
  zero_grads(params);
  backward(out.loss);
  opt.step(params);
  return out.loss->value.at(0, 0);
}

}  // namespace crossenc
