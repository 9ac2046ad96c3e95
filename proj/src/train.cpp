#include "crossenc/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "crossenc/errors.hpp"
#include "crossenc/log.hpp"

namespace crossenc {

namespace {

namespace fs = std::filesystem;

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// Fixed-format CSV fields so identical float bits always print identically.
std::string fmt_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
  return buf;
}

class LossLog {
 public:
  explicit LossLog(const std::string& path) {
    if (path.empty()) return;
    out_.open(path, std::ios::binary);
    if (!out_) throw DataError("train: cannot open " + path + " for writing");
    out_ << "step,lr,loss,tokens_masked\n";
  }
  void row(int64_t step, float lr, float loss, int64_t masked) {
    if (!out_.is_open()) return;
    out_ << step << "," << fmt_float(lr) << "," << fmt_float(loss) << "," << masked << "\n";
  }
 private:
  std::ofstream out_;
};

void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
  for (size_t i = 0; i + 1 < idx.size(); ++i) {
    const size_t j = i + rng.uniform_u64(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
}

void ensure_dir(const std::string& dir) {
  if (!dir.empty()) fs::create_directories(dir);
}

}  // namespace

PretrainRun run_pretrain(const ModelConfig& cfg, const std::vector<std::string>& corpus_lines,
                         const std::string& out_dir) {
  cfg.validate();
  ensure_dir(out_dir);

  Vocab vocab = Vocab::build(corpus_lines, cfg.min_count, cfg.vocab_size, cfg.n_special);
  if (!out_dir.empty()) vocab.save(join_path(out_dir, "vocab.txt"));
  TokenizedCorpus corpus = tokenize_corpus(corpus_lines, vocab);
  if (corpus.documents.empty()) throw DataError("pretrain: corpus is empty after tokenization");

  // vocab_size in the config is a cap; the model allocates what the data has.
  ModelConfig run_cfg = cfg;
  run_cfg.vocab_size = vocab.size();

  Rng init_rng(derive_seed(cfg.seed, "init"));
  Rng data_rng(derive_seed(cfg.seed, "data"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

  PretrainRun run;
  run.vocab = std::move(vocab);
  run.model = Model::init(run_cfg, init_rng);
  std::vector<Var> params = run.model.param_list();

  AdamConfig acfg;
  acfg.learning_rate = run_cfg.lr;
  acfg.warmup_steps = run_cfg.warmup_steps;
  acfg.max_steps = run_cfg.max_steps;
  Adam opt(acfg);

  LossLog log(out_dir.empty() ? "" : join_path(out_dir, "loss_log.csv"));
  const int64_t ckpt_every = std::max<int64_t>(1, run_cfg.max_steps / 20);

  std::vector<size_t> order(corpus.documents.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  size_t cursor = order.size();  // forces a shuffle on first use

  auto save_state = [&](const std::string& name) {
    if (out_dir.empty()) return std::string();
    TrainState ts;
    ts.step = opt.steps_taken();
    ts.data_rng = data_rng.serialize();
    ts.dropout_rng = dropout_rng.serialize();
    const std::string path = join_path(out_dir, name);
    save_checkpoint(path, run.model, run.vocab, {}, &opt, &ts);
    return path;
  };

  for (int64_t step = 1; step <= run_cfg.max_steps; ++step) {
    zero_grads(params);
    double loss_sum = 0.0;
    int64_t masked_sum = 0;

    const int docs_per_step = std::max(1, run_cfg.batch_size);
    try {
      for (int b = 0; b < docs_per_step; ++b) {
        if (cursor >= order.size()) {
          shuffle_indices(order, data_rng);
          cursor = 0;
        }
        const auto& doc = corpus.documents[order[cursor++]];
        auto sample = segment(doc, run_cfg.seq_len, run_cfg.m_max);
        auto batch = make_masked_batch(sample, run_cfg, data_rng);

        ForwardCtx ctx{true, run_cfg.dropout, &dropout_rng};
        auto out = pretrain_forward(run.model, batch, ctx);
        backward(out.loss);
        loss_sum += out.loss->value.at(0, 0);
        masked_sum += out.tokens_masked;
      }
    } catch (const NumericsError&) {
      // Ops reject non-finite values mid-forward; keep the postmortem dump.
      save_state("nan_dump.ckpt");
      throw;
    }

    const float loss = static_cast<float>(loss_sum / docs_per_step);
    if (!std::isfinite(loss)) {
      save_state("nan_dump.ckpt");
      throw NumericsError("pretrain: non-finite loss at step " + std::to_string(step));
    }
    const float lr = opt.schedule_lr(step);
    opt.step(params, 1.0f / static_cast<float>(docs_per_step));
    log.row(step, lr, loss, masked_sum);
    run.final_loss = loss;

    if (step % ckpt_every == 0) save_state("checkpoint.ckpt");
  }

  run.final_checkpoint = save_state("final.ckpt");
  return run;
}

PairPretrainRun run_pretrain_pairs(const ModelConfig& cfg, const SynthSpec& spec,
                                   const PairPretrainOpts& opts, const std::string& out_dir) {
  cfg.validate();
  if (cfg.seq_len < SynthSpec::kSeqLen)
    throw ConfigError("pretrain-pairs: seq_len must be >= " +
                      std::to_string(SynthSpec::kSeqLen));
  if (cfg.m_max < 2 * spec.pairs_per_doc)
    throw ConfigError("pretrain-pairs: m_max must cover " +
                      std::to_string(2 * spec.pairs_per_doc) + " sequences");
  const int required =
      spec.n_topics + spec.n_keys + spec.n_tags + spec.n_fillers + 3 + cfg.n_special;
  if (cfg.vocab_size < required)
    throw ConfigError("pretrain-pairs: vocab_size " + std::to_string(cfg.vocab_size) +
                      " cannot hold the " + std::to_string(required) + " inventory words");
  ensure_dir(out_dir);

  Vocab vocab = Vocab::build(synth_vocab_lines(spec), 1, cfg.vocab_size, cfg.n_special);
  ModelConfig run_cfg = cfg;
  run_cfg.vocab_size = vocab.size();

  Rng init_rng(derive_seed(cfg.seed, "init"));
  Rng data_rng(derive_seed(cfg.seed, "pair-data"));
  Rng dropout_rng(derive_seed(cfg.seed, "dropout"));

  PairPretrainRun run;
  run.vocab = std::move(vocab);
  run.model = Model::init(run_cfg, init_rng);
  std::vector<Var> params = run.model.param_list();

  AdamConfig acfg;
  acfg.learning_rate = opts.lr;
  acfg.warmup_steps = opts.warmup_steps;
  Adam opt(acfg);
  LossLog log(out_dir.empty() ? "" : join_path(out_dir, "loss_log.csv"));

  for (int64_t step = 1; step <= opts.steps; ++step) {
    zero_grads(params);
    double loss_sum = 0.0;
    int64_t masked_sum = 0;
    const auto docs = gen_pair_docs(spec, opts.docs_per_step, data_rng);
    for (const auto& doc : docs) {
      auto batch = probe_masked_batch(doc, run.vocab, run_cfg);
      ForwardCtx ctx{true, run_cfg.dropout, &dropout_rng};
      auto out = pretrain_forward(run.model, batch, ctx);
      backward(out.loss);
      loss_sum += out.loss->value.at(0, 0);
      masked_sum += out.tokens_masked;
    }
    const float loss = static_cast<float>(loss_sum / opts.docs_per_step);
    if (!std::isfinite(loss))
      throw NumericsError("pretrain-pairs: non-finite loss at step " + std::to_string(step));
    const float lr_now = opt.schedule_lr(step);
    opt.step(params, 1.0f / static_cast<float>(opts.docs_per_step));
    log.row(step, lr_now, loss, masked_sum);
    run.final_loss = loss;
  }
  return run;
}

float run_overfit(Model& model, const MaskedBatch& batch, int steps, float lr) {
  std::vector<Var> params = model.param_list();
  AdamConfig acfg;
  acfg.learning_rate = lr;
  Adam opt(acfg);
  Rng dropout_rng(derive_seed(model.cfg.seed, "dropout"));
  float loss = 0.0f;
  for (int i = 0; i < steps; ++i) {
    loss = pretrain_step(model, batch, opt, params, dropout_rng);
    if (!std::isfinite(loss))
      throw NumericsError("overfit: non-finite loss at step " + std::to_string(i + 1));
  }
  return loss;
}

float run_finetune_rank(Model& model, const Vocab& vocab,
                        const std::vector<RankingExample>& train,
                        const std::vector<std::string>& pool_lines,
                        const RankFinetuneOpts& opts, const std::string& out_dir) {
  if (train.empty()) throw DataError("finetune-rank: no training examples");
  if (pool_lines.size() < 2) throw DataError("finetune-rank: pool needs at least 2 entries");
  ensure_dir(out_dir);

  std::vector<std::vector<int>> pool_tokens;
  pool_tokens.reserve(pool_lines.size());
  for (const auto& line : pool_lines) pool_tokens.push_back(vocab.tokenize(line));

  // Gold resolution: exact text match against the pool.
  auto pool_index = [&](const std::string& text) {
    for (size_t i = 0; i < pool_lines.size(); ++i)
      if (pool_lines[i] == text) return static_cast<int>(i);
    throw DataError("finetune-rank: gold text not found in pool: " + text);
  };
  std::vector<int> gold_of(train.size());
  std::vector<std::vector<int>> query_tokens(train.size());
  for (size_t i = 0; i < train.size(); ++i) {
    gold_of[i] = pool_index(train[i].gold);
    query_tokens[i] = vocab.tokenize(train[i].query);
  }

  std::vector<Var> params = model.param_list();
  AdamConfig acfg;
  acfg.learning_rate = opts.lr;
  Adam opt(acfg);
  Rng data_rng(derive_seed(opts.seed, "rank-data"));
  Rng dropout_rng(derive_seed(opts.seed, "rank-dropout"));
  LossLog log(out_dir.empty() ? "" : join_path(out_dir, "loss_log.csv"));

  const int k = std::min(opts.k_negatives, static_cast<int>(pool_lines.size()) - 1);
  float loss_val = 0.0f;
  for (int step = 1; step <= opts.steps; ++step) {
    const size_t ex = data_rng.uniform_u64(train.size());
    auto rb = make_ranking_batch(query_tokens[ex], pool_tokens, gold_of[ex], k, model.cfg,
                                 data_rng);
    ForwardCtx ctx{true, model.cfg.dropout, &dropout_rng};
    auto ce = cross_forward(model, rb.batch, ctx);
    auto loss = ranking_loss(ce.attn, rb.gold_index);
    zero_grads(params);
    backward(loss);
    loss_val = loss->value.at(0, 0);
    if (!std::isfinite(loss_val))
      throw NumericsError("finetune-rank: non-finite loss at step " + std::to_string(step));
    opt.step(params);
    log.row(step, opts.lr, loss_val, 0);
  }
  return loss_val;
}

ClassifierHead run_finetune_cls(Model& model, const Vocab& vocab,
                                const std::vector<ClsExample>& train,
                                const ClsFinetuneOpts& opts, const std::string& out_dir) {
  if (train.empty()) throw DataError("finetune-cls: no training examples");
  for (const auto& ex : train)
    if (ex.label >= opts.classes)
      throw DataError("finetune-cls: label " + std::to_string(ex.label) + " outside " +
                      std::to_string(opts.classes) + " classes");
  ensure_dir(out_dir);

  Rng head_rng(derive_seed(opts.seed, "cls-head"));
  ClassifierHead head = ClassifierHead::init(opts.classes, model.cfg, head_rng);
  std::vector<Var> params = model.param_list();
  params.push_back(head.w);

  AdamConfig acfg;
  acfg.learning_rate = opts.lr;
  Adam opt(acfg);
  Rng data_rng(derive_seed(opts.seed, "cls-data"));
  Rng dropout_rng(derive_seed(opts.seed, "cls-dropout"));
  LossLog log(out_dir.empty() ? "" : join_path(out_dir, "loss_log.csv"));

  for (int step = 1; step <= opts.steps; ++step) {
    const auto& ex = train[data_rng.uniform_u64(train.size())];
    MaskedBatch pair;
    pair.sequences.push_back(finetune_sequence(vocab.tokenize(ex.s1), model.cfg));
    pair.sequences.push_back(finetune_sequence(vocab.tokenize(ex.s2), model.cfg));
    ForwardCtx ctx{true, model.cfg.dropout, &dropout_rng};
    auto [logits, loss] = classify(model, head, pair, ex.label, ctx);
    zero_grads(params);
    backward(loss);
    const float loss_val = loss->value.at(0, 0);
    if (!std::isfinite(loss_val))
      throw NumericsError("finetune-cls: non-finite loss at step " + std::to_string(step));
    opt.step(params);
    log.row(step, opts.lr, loss_val, 0);
  }
  return head;
}

double eval_classification(const Model& model, const ClassifierHead& head, const Vocab& vocab,
                           const std::vector<ClsExample>& examples) {
  if (examples.empty()) throw DataError("eval-cls: no examples");
  ForwardCtx ctx;
  size_t hits = 0;
  for (const auto& ex : examples) {
    MaskedBatch pair;
    pair.sequences.push_back(finetune_sequence(vocab.tokenize(ex.s1), model.cfg));
    pair.sequences.push_back(finetune_sequence(vocab.tokenize(ex.s2), model.cfg));
    auto [logits, loss] = classify(model, head, pair, -1, ctx);
    int best = 0;
    for (int c = 1; c < head.classes; ++c)
      if (logits->value.at(0, c) > logits->value.at(0, best)) best = c;
    if (best == ex.label) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

RankEval eval_ranking(const Model& model, const Vocab& vocab,
                      const std::vector<std::string>& pool_lines,
                      const std::vector<RankingExample>& queries) {
  if (queries.empty()) throw DataError("eval-rank: no queries");
  std::vector<std::vector<int>> pool_tokens;
  std::vector<int64_t> ids;
  for (size_t i = 0; i < pool_lines.size(); ++i) {
    pool_tokens.push_back(vocab.tokenize(pool_lines[i]));
    ids.push_back(static_cast<int64_t>(i));
  }
  auto index = build_index(model, pool_tokens, ids);

  auto pool_id = [&](const std::string& text) -> int64_t {
    for (size_t i = 0; i < pool_lines.size(); ++i)
      if (pool_lines[i] == text) return static_cast<int64_t>(i);
    throw DataError("eval-rank: gold text not found in pool: " + text);
  };

  RankEval ev;
  std::vector<int> gold_ranks;
  for (size_t q = 0; q < queries.size(); ++q) {
    auto res = rank(model, index, vocab.tokenize(queries[q].query),
                    static_cast<int>(index.size()), pool_id(queries[q].gold));
    gold_ranks.push_back(res.gold_rank);
    ev.rows.push_back({static_cast<int64_t>(q), res.gold_rank});
  }
  ev.recall1 = recall_at_k(gold_ranks, 1);
  ev.recall5 = recall_at_k(gold_ranks, 5);
  ev.recall20 = recall_at_k(gold_ranks, 20);
  return ev;
}

}  // namespace crossenc
