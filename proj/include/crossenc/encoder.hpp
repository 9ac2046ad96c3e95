#pragma once

#include <vector>

#include "crossenc/autograd.hpp"
#include "crossenc/config.hpp"
#include "crossenc/corpus.hpp"

namespace crossenc {

// Per-forward context: dropout is active only while training, and its draws
// come from the supplied stream so runs replay exactly.
struct ForwardCtx {
  bool training = false;
  float dropout = 0.0f;
  Rng* rng = nullptr;
};

struct EncoderLayerParams {
  Var wq, bq, wk, bk, wv, bv, wo, bo;  // self-attention projections
  Var ln1_g, ln1_b, ln2_g, ln2_b;      // pre-attention / pre-ffn norms
  Var ff1_w, ff1_b, ff2_w, ff2_b;      // position-wise feed-forward (d -> 4d -> d)
};

// Within-sequence Transformer. Special tokens draw their content embedding
// from the reserved rows of the shared token table and sit at fixed positions
// (their own small table); word tokens add the word-position row at
// offset + i. Blocks are pre-norm with a final layer norm.
struct EncoderParams {
  Var tok_emb;      // V x d, also the tied output projection
  Var pos_emb;      // (max_pos + 1) x d
  Var special_pos;  // N x d
  std::vector<EncoderLayerParams> layers;
  Var final_g, final_b;

  static EncoderParams init(const ModelConfig& cfg, Rng& rng);
  void collect(std::vector<Var>& out) const;  // stable checkpoint order
};

struct EncodedSequence {
  Var h;           // (N + len) x d hidden states
  Var e;           // N x d, first N rows of h
  int len = 0;     // word count, excludes special tokens
  int offset = 0;  // word position offset used
};

// Multi-head attention core shared with the cross-sequence layers: splits the
// projected q/k/v (rows x d) into n_heads column blocks, applies
// softmax(q_h k_h^T / sqrt(d_h) [+ mask]) per head and concatenates the
// aggregated values. Per-head attention matrices are appended to *alphas when
// requested (before dropout, so they are exact probability rows).
Var attention_heads(const Var& q, const Var& k, const Var& v, int n_heads,
                    const Tensor* additive_mask, const ForwardCtx& ctx,
                    std::vector<Var>* alphas = nullptr);

// Encodes one masked sequence: H = Transformer([S; X]), E = first N rows.
// Token ids must be < V; pad_to >= len extends the words with PAD tokens that
// are excluded from attention (outputs are still trimmed to N + len rows).
EncodedSequence encode(const EncoderParams& params, const ModelConfig& cfg,
                       const MaskedSequence& seq, const ForwardCtx& ctx, int pad_to = 0);

// Encodes every sequence of the batch at a common padded length.
std::vector<EncodedSequence> encode_batch(const EncoderParams& params, const ModelConfig& cfg,
                                          const MaskedBatch& batch, const ForwardCtx& ctx);

}  // namespace crossenc
