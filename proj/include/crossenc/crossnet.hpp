#pragma once

#include <utility>
#include <vector>

#include "crossenc/adam.hpp"
#include "crossenc/config.hpp"
#include "crossenc/encoder.hpp"

namespace crossenc {

// One cross-sequence Transformer layer. W^Q and W^K carry no bias: retrieval
// caches F_n W^K per stored sequence, and a bias would cancel in the softmax
// anyway. Post-norm wiring so the attention sees the raw stacked embeddings.
struct CrossLayerParams {
  Var wq, wk;          // d x d
  Var wv, bv, wo, bo;  // value / output projections
  Var ln1_g, ln1_b, ln2_g, ln2_b;
  Var ff1_w, ff1_b, ff2_w, ff2_b;
};

// Parameters past the encoder: N separate stacks of cross-sequence layers
// (one per special token), a shared fusion stack over the merged sequences,
// and the output bias of the tied vocabulary projection. In mlm-only mode the
// cross and fusion stacks are empty and predictions come straight from H_m.
struct CrossParams {
  std::vector<std::vector<CrossLayerParams>> per_token;  // [n][depth]
  std::vector<EncoderLayerParams> fusion;                // shared, post-norm
  Var vocab_bias;                                        // 1 x V

  static CrossParams init(const ModelConfig& cfg, Rng& rng);
  void collect(std::vector<Var>& out) const;
};

// Per-head cross-attention matrices, all M x M and row-stochastic. Ordered by
// special token, then layer depth, then head.
struct AttentionSet {
  int m = 0;
  int n_special = 0;
  int heads = 0;
  int depth = 0;
  std::vector<Var> mats;

  const Var& at(int n, int layer, int head) const {
    return mats[static_cast<size_t>((n * depth + layer) * heads + head)];
  }
};

struct Model {
  ModelConfig cfg;
  EncoderParams enc;
  CrossParams cross;

  static Model init(const ModelConfig& cfg, Rng& rng);
  std::vector<Var> param_list() const;  // stable order, matches checkpoints
};

// Cross-sequence attention for one special token: stacks the n-th embedding
// of every sequence (CrossState F_n, M x d), runs the token's layer stack and
// returns C_n plus the per-layer, per-head attention matrices.
std::pair<Var, std::vector<Var>> cross_attend(const std::vector<CrossLayerParams>& layers,
                                              const Var& f_n, int n_heads,
                                              const ForwardCtx& ctx);

// Stacks row n of every sequence embedding into F_n.
Var stack_special(const std::vector<EncodedSequence>& encs, int n);

// Merged per-sequence state: G_m = [C_0[m]; ...; C_{N-1}[m]; H_m[N:]].
Var fuse_sequence(const std::vector<Var>& c_list, const EncodedSequence& enc, int m);

struct PretrainOutput {
  Var loss;                         // scalar L_mask
  AttentionSet attn;                // empty in mlm-only mode
  std::vector<EncodedSequence> encs;
  int tokens_masked = 0;
};

// Full pretraining forward over one document batch: encode, cross-attend per
// special token, fuse, predict masked words through the tied projection.
// L_mask is the mean negative log-likelihood over every masked token in the
// batch; zero (with a warning) when nothing is masked.
PretrainOutput pretrain_forward(const Model& model, const MaskedBatch& batch,
                                const ForwardCtx& ctx);

// Encode + cross-attend only; used by ranking paths that need attention but
// no vocabulary prediction. Requires cross mode.
struct CrossEncoding {
  std::vector<EncodedSequence> encs;
  std::vector<Var> c_list;  // C_n per special token
  AttentionSet attn;
};
CrossEncoding cross_forward(const Model& model, const MaskedBatch& batch, const ForwardCtx& ctx);

// One optimizer step on one document batch. Returns L_mask.
float pretrain_step(Model& model, const MaskedBatch& batch, Adam& opt, const std::vector<Var>& params,
                    Rng& dropout_rng);

}  // namespace crossenc
