#include "crossenc/encoder.hpp"

#include <string>

#include "crossenc/errors.hpp"

namespace crossenc {

namespace {

// Fan-in scaled init keeps activation and copy-path magnitudes comparable
// across hidden sizes; a fixed small constant starves narrow models.
Var weight(int rows, int cols, Rng& rng, const std::string& name) {
  const float std = 1.0f / std::sqrt(static_cast<float>(rows));
  return make_param(Tensor::randn(rows, cols, std, rng), name);
}

// Embedding tables: rows are activations, so scale by width.
Var table(int rows, int cols, Rng& rng, const std::string& name) {
  const float std = 1.0f / std::sqrt(static_cast<float>(cols));
  return make_param(Tensor::randn(rows, cols, std, rng), name);
}

Var zeros_param(int rows, int cols, const std::string& name) {
  return make_param(Tensor::zeros(rows, cols), name);
}

Var ones_param(int cols, const std::string& name) {
  return make_param(Tensor::full(1, cols, 1.0f), name);
}

EncoderLayerParams init_layer(const ModelConfig& cfg, Rng& rng, const std::string& prefix) {
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

void collect_layer(const EncoderLayerParams& p, std::vector<Var>& out) {
  out.insert(out.end(), {p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo, p.ln1_g, p.ln1_b,
                         p.ln2_g, p.ln2_b, p.ff1_w, p.ff1_b, p.ff2_w, p.ff2_b});
}

constexpr float kLnEps = 1e-5f;

}  // namespace

EncoderParams EncoderParams::init(const ModelConfig& cfg, Rng& rng) {
  EncoderParams p;
  p.tok_emb = table(cfg.vocab_size, cfg.d, rng, "tok_emb");
  p.pos_emb = table(cfg.max_pos + 1, cfg.d, rng, "pos_emb");
  p.special_pos = table(cfg.n_special, cfg.d, rng, "special_pos");
  p.layers.reserve(static_cast<size_t>(cfg.layers));
  for (int l = 0; l < cfg.layers; ++l)
    p.layers.push_back(init_layer(cfg, rng, "enc." + std::to_string(l)));
  p.final_g = ones_param(cfg.d, "enc.final_g");
  p.final_b = zeros_param(1, cfg.d, "enc.final_b");
  return p;
}

void EncoderParams::collect(std::vector<Var>& out) const {
  out.insert(out.end(), {tok_emb, pos_emb, special_pos});
  for (const auto& l : layers) collect_layer(l, out);
  out.insert(out.end(), {final_g, final_b});
}

Var attention_heads(const Var& q, const Var& k, const Var& v, int n_heads,
                    const Tensor* additive_mask, const ForwardCtx& ctx,
                    std::vector<Var>* alphas) {
  const int d = q->value.cols();
  if (d % n_heads != 0)
    throw NumericsError("attention_heads: width " + std::to_string(d) + " not divisible by " +
                        std::to_string(n_heads) + " heads");
  const int dh = d / n_heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    auto qh = slice_cols(q, h * dh, (h + 1) * dh);
    auto kh = slice_cols(k, h * dh, (h + 1) * dh);
    auto vh = slice_cols(v, h * dh, (h + 1) * dh);
    auto logits = scale(matmul_nt(qh, kh), inv_sqrt);
    auto attn = additive_mask ? softmax_rows_masked(logits, *additive_mask)
                              : softmax_rows(logits);
    if (alphas) alphas->push_back(attn);
    if (ctx.training && ctx.dropout > 0.0f)
      attn = dropout(attn, ctx.dropout, true, *ctx.rng);
    outs.push_back(matmul(attn, vh));
  }
  return n_heads == 1 ? outs[0] : concat_cols(outs);
}

namespace {

Var maybe_dropout(const Var& x, const ForwardCtx& ctx) {
  if (!ctx.training || ctx.dropout <= 0.0f) return x;
  return dropout(x, ctx.dropout, true, *ctx.rng);
}

Var encoder_block(const Var& x, const EncoderLayerParams& p, int n_heads,
                  const Tensor* additive_mask, const ForwardCtx& ctx) {
  auto normed = layer_norm(x, p.ln1_g, p.ln1_b, kLnEps);
  auto q = add_rowvec(matmul(normed, p.wq), p.bq);
  auto k = add_rowvec(matmul(normed, p.wk), p.bk);
  auto v = add_rowvec(matmul(normed, p.wv), p.bv);
  auto heads_out = attention_heads(q, k, v, n_heads, additive_mask, ctx);
  auto attn = maybe_dropout(add_rowvec(matmul(heads_out, p.wo), p.bo), ctx);
  auto x1 = add(x, attn);

  auto normed2 = layer_norm(x1, p.ln2_g, p.ln2_b, kLnEps);
  auto ff = add_rowvec(matmul(gelu(add_rowvec(matmul(normed2, p.ff1_w), p.ff1_b)), p.ff2_w),
                       p.ff2_b);
  return add(x1, maybe_dropout(ff, ctx));
}

}  // namespace

EncodedSequence encode(const EncoderParams& params, const ModelConfig& cfg,
                       const MaskedSequence& seq, const ForwardCtx& ctx, int pad_to) {
  const int len = seq.len();
  if (len < 1) throw DataError("encode: empty sequence");
  const int padded = pad_to > 0 ? pad_to : len;
  if (padded < len) throw DataError("encode: pad_to shorter than sequence");
  if (seq.offset < 0 || seq.offset + len - 1 > cfg.max_pos)
    throw DataError("encode: offset " + std::to_string(seq.offset) + " overflows position table");

  const int n = cfg.n_special;
  std::vector<int> content_ids(static_cast<size_t>(n + padded), Vocab::kPad);
  std::vector<int> pos_ids(static_cast<size_t>(padded), 0);
  for (int i = 0; i < n; ++i) content_ids[static_cast<size_t>(i)] = 3 + i;
  for (int i = 0; i < len; ++i) {
    const int id = seq.input[static_cast<size_t>(i)];
    if (id < 0 || id >= cfg.vocab_size)
      throw DataError("encode: token id " + std::to_string(id) + " out of range at position " +
                      std::to_string(i));
    content_ids[static_cast<size_t>(n + i)] = id;
    pos_ids[static_cast<size_t>(i)] = seq.offset + i;
  }
  for (int i = len; i < padded; ++i) pos_ids[static_cast<size_t>(i)] = 0;

  // Content + position sums; specials use their own position table.
  std::vector<int> special_rows(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) special_rows[static_cast<size_t>(i)] = i;
  auto x = concat_rows({add(embedding(params.tok_emb, {content_ids.begin(), content_ids.begin() + n}),
                            embedding(params.special_pos, special_rows)),
                        add(embedding(params.tok_emb, {content_ids.begin() + n, content_ids.end()}),
                            embedding(params.pos_emb, pos_ids))});
  x = maybe_dropout(x, ctx);

  // Additive key mask shared by every layer: pads beyond the real words are
  // unreachable; specials and words attend to each other freely.
  const int total = n + padded;
  Tensor mask;
  const Tensor* mask_ptr = nullptr;
  if (padded > len) {
    mask = Tensor::zeros(total, total);
    for (int r = 0; r < total; ++r)
      for (int c = n + len; c < total; ++c) mask.at(r, c) = -1e9f;
    mask_ptr = &mask;
  }

  for (const auto& layer : params.layers) x = encoder_block(x, layer, cfg.heads, mask_ptr, ctx);
  x = layer_norm(x, params.final_g, params.final_b, kLnEps);
  if (padded > len) x = slice_rows(x, 0, n + len);

  EncodedSequence out;
  out.h = x;
  out.e = slice_rows(x, 0, n);
  out.len = len;
  out.offset = seq.offset;
  return out;
}

std::vector<EncodedSequence> encode_batch(const EncoderParams& params, const ModelConfig& cfg,
                                          const MaskedBatch& batch, const ForwardCtx& ctx) {
  if (batch.sequences.empty()) throw DataError("encode_batch: empty batch");
  int common = 0;
  for (const auto& s : batch.sequences) common = std::max(common, s.len());
  std::vector<EncodedSequence> out;
  out.reserve(batch.sequences.size());
  for (const auto& s : batch.sequences) out.push_back(encode(params, cfg, s, ctx, common));
  return out;
}

}  // namespace crossenc
