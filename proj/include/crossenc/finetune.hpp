#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crossenc/crossnet.hpp"

namespace crossenc {

// Elementwise mean over every attention matrix in the set (all special
// tokens, layers, heads). Rows stay probability vectors by convexity.
Var mean_attention(const AttentionSet& attn);

// L_answer = -log(mean_attention[0][gold]). Row 0 is the question; gold is a
// candidate index in [1, M-1]. A zero weight is clamped at 1e-12 with a
// warning instead of producing -inf.
Var ranking_loss(const AttentionSet& attn, int gold);

// k distinct uniform negatives from a pool of pool_size sequences, gold
// inserted at a random position among them. Returns candidate pool indices
// and the gold's position in that list.
struct NegativeSample {
  std::vector<int> candidates;
  int gold_index = -1;
};
NegativeSample sample_negatives(int pool_size, int gold, int k, Rng& rng);

// Question + candidates assembled for one ranking step. Sequence 0 is the
// question; gold_index points at the gold candidate (in [1, M-1]).
struct RankingBatch {
  MaskedBatch batch;
  int gold_index = -1;
};
RankingBatch make_ranking_batch(const std::vector<int>& query,
                                const std::vector<std::vector<int>>& pool, int gold, int k,
                                const ModelConfig& cfg, Rng& rng);

// Plain unmasked sequence for finetuning and retrieval paths: truncated to
// seq_len, fixed offset 0.
MaskedSequence finetune_sequence(const std::vector<int>& tokens, const ModelConfig& cfg);

// Sentence-pair classifier. W^c maps the flattened stack of cross outputs
// (2N rows of d) to class logits; no bias.
struct ClassifierHead {
  Var w;  // classes x 2Nd
  int classes = 0;

  static ClassifierHead init(int classes, const ModelConfig& cfg, Rng& rng);
};

// Cross-encodes exactly two sequences, stacks C_0..C_{N-1} into a 2N x d
// matrix, flattens and applies the head. Returns (logits 1 x classes, L_cls).
// label == -1 skips the loss (logits only).
std::pair<Var, Var> classify(const Model& model, const ClassifierHead& head,
                             const MaskedBatch& pair, int label, const ForwardCtx& ctx);

struct RankingExample {
  std::string query, gold;
};
struct ClsExample {
  std::string s1, s2;
  int label = 0;
};

// Tab-separated: query, gold text. A third column (per-line pool file) is
// accepted and must agree across the file.
std::vector<RankingExample> load_ranking_dataset(const std::string& path, std::string* pool_ref);
// Tab-separated: sentence1, sentence2, integer label.
std::vector<ClsExample> load_cls_dataset(const std::string& path);

}  // namespace crossenc
