#pragma once

#include <string>
#include <vector>

#include "crossenc/checkpoint.hpp"
#include "crossenc/crossnet.hpp"
#include "crossenc/finetune.hpp"
#include "crossenc/retrieval.hpp"
#include "crossenc/synth.hpp"

namespace crossenc {

// Pretraining over a line-per-document corpus. Builds the vocabulary, then
// runs cfg.max_steps optimizer steps of cfg.batch_size documents each
// (documents shuffled per epoch, gradients averaged across the batch).
// Writes to out_dir: vocab.txt, loss_log.csv (step,lr,loss,tokens_masked),
// a rolling checkpoint.ckpt every max(1, max_steps/20) steps and final.ckpt.
// A non-finite loss dumps nan_dump.ckpt and raises NumericsError.
struct PretrainRun {
  Model model;
  Vocab vocab;
  float final_loss = 0.0f;
  std::string final_checkpoint;
};
PretrainRun run_pretrain(const ModelConfig& cfg, const std::vector<std::string>& corpus_lines,
                         const std::string& out_dir);

// Single-batch overfit with a constant learning rate; returns the last loss.
// Used by the acceptance gate and quick experiments.
float run_overfit(Model& model, const MaskedBatch& batch, int steps, float lr);

// Pretraining on streamed pair documents whose probe key slots are masked by
// construction (carriers stay intact). Every step draws docs_per_step fresh
// documents, so no document repeats and held-out evaluation only needs a new
// rng. The vocabulary covers the full inventories of the spec; cfg.vocab_size
// must leave room for them. Writes loss_log.csv to out_dir if non-empty.
struct PairPretrainOpts {
  int64_t steps = 10000;
  int docs_per_step = 8;
  float lr = 1e-3f;
  int64_t warmup_steps = 200;
};
struct PairPretrainRun {
  Model model;
  Vocab vocab;
  float final_loss = 0.0f;
};
PairPretrainRun run_pretrain_pairs(const ModelConfig& cfg, const SynthSpec& spec,
                                   const PairPretrainOpts& opts, const std::string& out_dir);

// Ranking finetune: each step draws one training example, samples negatives
// from the pool (k + 1 candidates + the query) and minimizes the attention
// loss on the gold. Writes loss_log.csv to out_dir if non-empty.
struct RankFinetuneOpts {
  int steps = 500;
  float lr = 1e-4f;
  int k_negatives = 19;
  uint64_t seed = 1;
};
float run_finetune_rank(Model& model, const Vocab& vocab,
                        const std::vector<RankingExample>& train,
                        const std::vector<std::string>& pool_lines,
                        const RankFinetuneOpts& opts, const std::string& out_dir);

// Classification finetune over sentence pairs; trains model + head end to
// end. Returns the trained head.
struct ClsFinetuneOpts {
  int steps = 500;
  float lr = 1e-4f;
  int classes = 3;
  uint64_t seed = 1;
};
ClassifierHead run_finetune_cls(Model& model, const Vocab& vocab,
                                const std::vector<ClsExample>& train,
                                const ClsFinetuneOpts& opts, const std::string& out_dir);

// Accuracy of a trained pair classifier over a labelled set.
double eval_classification(const Model& model, const ClassifierHead& head, const Vocab& vocab,
                           const std::vector<ClsExample>& examples);

// Ranking metrics over an explicit candidate pool: builds a fresh index from
// the pool lines and ranks every query against it. Gold texts must match a
// pool line exactly.
struct RankEval {
  double recall1 = 0, recall5 = 0, recall20 = 0;
  std::vector<RankMetricsRow> rows;
};
RankEval eval_ranking(const Model& model, const Vocab& vocab,
                      const std::vector<std::string>& pool_lines,
                      const std::vector<RankingExample>& queries);

}  // namespace crossenc
