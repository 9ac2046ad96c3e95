#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crossenc/crossnet.hpp"
#include "crossenc/finetune.hpp"

namespace crossenc {

// Precomputed store of sequence embeddings: for every indexed sequence the N
// special-token embeddings E and their key projections F_n W^K_n (first
// cross layer of each special token's stack). Queries only need their own
// W^Q projection, so candidate encoding cost is paid once.
struct EmbeddingIndex {
  std::string fingerprint;  // must match the scoring model
  int n_special = 0;
  int d = 0;
  int heads = 0;
  std::vector<int64_t> ids;
  std::vector<Tensor> e;       // N x d per sequence
  std::vector<Tensor> kcache;  // N x d per sequence, row n = E[n] W^K_n

  size_t size() const { return ids.size(); }
  void save(const std::string& path) const;
  static EmbeddingIndex load(const std::string& path);
};

// FNV-1a over the canonical config and every parameter's raw bytes.
std::string model_fingerprint(const Model& model);

// Encodes every sequence once (eval mode, offset 0) and fills E and K_cache.
// Requires cross mode (the key projections live in the cross layers).
EmbeddingIndex build_index(const Model& model, const std::vector<std::vector<int>>& sequences,
                           const std::vector<int64_t>& seq_ids);

struct RankResult {
  std::vector<int64_t> ids;   // top-k, scores non-increasing, ties by id
  std::vector<float> scores;  // mean pre-softmax logits
  int gold_rank = -1;         // 1-based over the full index; -1 if unknown
};

// score(c) = mean over special tokens n and heads h of q_nh . k_nh / sqrt(d_h)
// with q_n the query's first-layer W^Q projection and k from the cache.
// Pre-softmax logits keep pairwise order independent of the candidate set.
RankResult rank(const Model& model, const EmbeddingIndex& index, const std::vector<int>& query,
                int k, int64_t gold_id = -1);

// Fraction of queries whose 1-based gold rank is within k; -1 counts as miss.
double recall_at_k(const std::vector<int>& gold_ranks, int k);

struct RankMetricsRow {
  int64_t query_id = 0;
  int gold_rank = -1;
};
// CSV: query_id, gold_rank, recall@1, recall@5, recall@20 per row.
void write_rank_metrics(const std::string& path, const std::vector<RankMetricsRow>& rows);

}  // namespace crossenc
