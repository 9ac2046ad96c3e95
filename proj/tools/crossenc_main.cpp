#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crossenc/checkpoint.hpp"
#include "crossenc/config.hpp"
#include "crossenc/errors.hpp"
#include "crossenc/log.hpp"
#include "crossenc/retrieval.hpp"
#include "crossenc/selftest.hpp"
#include "crossenc/synth.hpp"
#include "crossenc/train.hpp"

namespace fs = std::filesystem;
using namespace crossenc;

namespace {

constexpr const char* kBuildId = CROSSENC_BUILD_ID;

std::string join_path(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

void log_run_header(const ModelConfig& cfg) {
  log_info("build " + std::string(kBuildId) + " config " + config_hash(cfg));
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
  std::string config, corpus, out;
  int64_t seed = -1;
  std::string mode;
};

int cmd_pretrain(const PretrainArgs& a) {
  ModelConfig cfg = a.config.empty() ? ModelConfig{} : load_config_file(a.config);
  if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
  if (!a.mode.empty()) cfg.mode = mode_from_string(a.mode);
  cfg.validate();
  log_run_header(cfg);

  fs::create_directories(a.out);
  write_text(join_path(a.out, "config.json"), config_to_json(cfg));

  auto lines = read_corpus_lines(a.corpus);
  auto run = run_pretrain(cfg, lines, a.out);
  log_info("pretrain done: final loss " + std::to_string(run.final_loss) + ", checkpoint " +
           run.final_checkpoint);
  return 0;
}

// ---------------------------------------------------------------- finetune

struct FinetuneArgs {
  std::string checkpoint, task, data, eval_data, pool, out;
  int64_t seed = 1;
  int steps = 500;
  float lr = 1e-4f;
  int k = 19;
  int classes = 3;
};

std::vector<std::string> resolve_pool(const FinetuneArgs& a, const std::string& pool_ref) {
  std::string pool_path = a.pool;
  if (pool_path.empty() && !pool_ref.empty()) {
    // Third TSV column names the pool file, relative to the dataset.
    pool_path = (fs::path(a.data).parent_path() / pool_ref).string();
  }
  if (pool_path.empty())
    throw ConfigError("finetune rank: supply --pool or a pool column in the dataset");
  return read_corpus_lines(pool_path);
}

int cmd_finetune(const FinetuneArgs& a) {
  auto ckpt = load_checkpoint(a.checkpoint);
  log_run_header(ckpt.model.cfg);
  fs::create_directories(a.out);
  write_text(join_path(a.out, "config.json"), config_to_json(ckpt.model.cfg));

  if (a.task == "rank") {
    std::string pool_ref;
    auto train = load_ranking_dataset(a.data, &pool_ref);
    auto pool = resolve_pool(a, pool_ref);

    RankFinetuneOpts opts;
    opts.steps = a.steps;
    opts.lr = a.lr;
    opts.k_negatives = a.k;
    opts.seed = static_cast<uint64_t>(a.seed);
    const float last = run_finetune_rank(ckpt.model, ckpt.vocab, train, pool, opts, a.out);
    log_info("finetune rank done: last loss " + std::to_string(last));
    save_checkpoint(join_path(a.out, "finetuned.ckpt"), ckpt.model, ckpt.vocab);

    if (!a.eval_data.empty()) {
      std::string eval_pool_ref;
      auto queries = load_ranking_dataset(a.eval_data, &eval_pool_ref);
      auto ev = eval_ranking(ckpt.model, ckpt.vocab, pool, queries);
      write_rank_metrics(join_path(a.out, "metrics.csv"), ev.rows);
      log_info("rank eval: recall@1 " + std::to_string(ev.recall1) + ", recall@5 " +
               std::to_string(ev.recall5) + ", recall@20 " + std::to_string(ev.recall20));
    }
  } else if (a.task == "cls") {
    auto train = load_cls_dataset(a.data);
    ClsFinetuneOpts opts;
    opts.steps = a.steps;
    opts.lr = a.lr;
    opts.classes = a.classes;
    opts.seed = static_cast<uint64_t>(a.seed);
    auto head = run_finetune_cls(ckpt.model, ckpt.vocab, train, opts, a.out);
    save_checkpoint(join_path(a.out, "finetuned.ckpt"), ckpt.model, ckpt.vocab, {head.w});

    if (!a.eval_data.empty()) {
      auto eval = load_cls_dataset(a.eval_data);
      const double acc = eval_classification(ckpt.model, head, ckpt.vocab, eval);
      write_text(join_path(a.out, "metrics.csv"),
                 "metric,value\naccuracy," + std::to_string(acc) + "\n");
      log_info("cls eval: accuracy " + std::to_string(acc));
    }
  } else {
    throw ConfigError("finetune: --task must be rank or cls, got '" + a.task + "'");
  }
  return 0;
}

// ---------------------------------------------------------------- encode

struct EncodeArgs {
  std::string checkpoint, corpus, out;
};

int cmd_encode(const EncodeArgs& a) {
  auto ckpt = load_checkpoint(a.checkpoint);
  log_run_header(ckpt.model.cfg);
  auto lines = read_corpus_lines(a.corpus);
  std::vector<std::vector<int>> seqs;
  std::vector<int64_t> ids;
  for (size_t i = 0; i < lines.size(); ++i) {
    seqs.push_back(ckpt.vocab.tokenize(lines[i]));
    ids.push_back(static_cast<int64_t>(i));
  }
  auto index = build_index(ckpt.model, seqs, ids);
  index.save(a.out);
  log_info("encoded " + std::to_string(index.size()) + " sequences -> " + a.out);
  return 0;
}

// ---------------------------------------------------------------- rank

struct RankArgs {
  std::string checkpoint, index, corpus, queries, out;
  int k = 20;
};

int cmd_rank(const RankArgs& a) {
  auto ckpt = load_checkpoint(a.checkpoint);
  log_run_header(ckpt.model.cfg);
  auto pool_lines = read_corpus_lines(a.corpus);

  EmbeddingIndex index;
  if (!a.index.empty()) {
    index = EmbeddingIndex::load(a.index);
  } else {
    std::vector<std::vector<int>> seqs;
    std::vector<int64_t> ids;
    for (size_t i = 0; i < pool_lines.size(); ++i) {
      seqs.push_back(ckpt.vocab.tokenize(pool_lines[i]));
      ids.push_back(static_cast<int64_t>(i));
    }
    index = build_index(ckpt.model, seqs, ids);
  }
  if (index.size() != pool_lines.size())
    throw DataError("rank: index holds " + std::to_string(index.size()) + " entries but --corpus has " +
                    std::to_string(pool_lines.size()) + " lines");

  std::string pool_ref;
  auto queries = load_ranking_dataset(a.queries, &pool_ref);

  auto pool_id = [&](const std::string& text) -> int64_t {
    for (size_t i = 0; i < pool_lines.size(); ++i)
      if (pool_lines[i] == text) return static_cast<int64_t>(i);
    throw DataError("rank: gold text not found in pool: " + text);
  };

  std::vector<RankMetricsRow> rows;
  std::vector<int> gold_ranks;
  for (size_t q = 0; q < queries.size(); ++q) {
    auto res = rank(ckpt.model, index, ckpt.vocab.tokenize(queries[q].query), a.k,
                    pool_id(queries[q].gold));
    rows.push_back({static_cast<int64_t>(q), res.gold_rank});
    gold_ranks.push_back(res.gold_rank);
  }
  write_rank_metrics(a.out, rows);
  log_info("rank: recall@1 " + std::to_string(recall_at_k(gold_ranks, 1)) + ", recall@5 " +
           std::to_string(recall_at_k(gold_ranks, 5)) + ", recall@" + std::to_string(a.k) + " " +
           std::to_string(recall_at_k(gold_ranks, a.k)));
  return 0;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  int64_t seed = 1234;
  int docs = 2000;
  int pool_size = 20;
  int train_n = 200;
  int eval_n = 100;
};

int cmd_synth(const SynthArgs& a) {
  fs::create_directories(a.out);
  SynthSpec spec;
  Rng rng(derive_seed(static_cast<uint64_t>(a.seed), "synth"));

  auto docs = gen_pair_docs(spec, a.docs, rng);
  write_corpus(join_path(a.out, "corpus.txt"), docs);

  auto rank_data = gen_rank_data(spec, a.pool_size, a.train_n, a.eval_n, rng);
  write_lines(join_path(a.out, "rank_pool.txt"), rank_data.pool);
  write_rank_tsv(join_path(a.out, "rank_train.tsv"), rank_data.train);
  write_rank_tsv(join_path(a.out, "rank_eval.tsv"), rank_data.eval);

  auto cls_data = gen_cls_data(spec, a.train_n, a.eval_n, rng);
  write_cls_tsv(join_path(a.out, "cls_train.tsv"), cls_data.train);
  write_cls_tsv(join_path(a.out, "cls_eval.tsv"), cls_data.eval);

  log_info("synth: " + std::to_string(a.docs) + " docs, rank pool " + std::to_string(a.pool_size) +
           ", train/eval " + std::to_string(a.train_n) + "/" + std::to_string(a.eval_n) + " -> " +
           a.out);
  return 0;
}

// ---------------------------------------------------------------- selftest

int cmd_selftest(uint64_t seed) {
  auto results = run_selftests(seed);
  print_results(results, std::cout);
  if (!all_passed(results)) {
    std::cout << "selftest: FAILED\n";
    return 3;
  }
  std::cout << "selftest: all " << results.size() << " checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crossenc: sentence encoder pretrained with cross-sequence attention"};
  app.require_subcommand(1);

  PretrainArgs pt;
  auto* pretrain = app.add_subcommand("pretrain", "pretrain on a line-per-document corpus");
  pretrain->add_option("--config", pt.config, "JSON config file (defaults when omitted)");
  pretrain->add_option("--corpus", pt.corpus, "corpus, one document per line")->required();
  pretrain->add_option("--out", pt.out, "output directory")->required();
  pretrain->add_option("--seed", pt.seed, "override config seed");
  pretrain->add_option("--mode", pt.mode, "override mode: cross or mlm-only");

  FinetuneArgs ft;
  auto* finetune = app.add_subcommand("finetune", "finetune a pretrained checkpoint");
  finetune->add_option("--checkpoint", ft.checkpoint, "pretrained checkpoint")->required();
  finetune->add_option("--task", ft.task, "rank or cls")->required();
  finetune->add_option("--data", ft.data, "training TSV")->required();
  finetune->add_option("--eval-data", ft.eval_data, "evaluation TSV (writes metrics.csv)");
  finetune->add_option("--pool", ft.pool, "candidate pool file (rank)");
  finetune->add_option("--out", ft.out, "output directory")->required();
  finetune->add_option("--seed", ft.seed, "finetuning seed");
  finetune->add_option("--steps", ft.steps, "optimizer steps");
  finetune->add_option("--lr", ft.lr, "learning rate");
  finetune->add_option("--k", ft.k, "negatives per ranking step");
  finetune->add_option("--classes", ft.classes, "class count (cls)");

  EncodeArgs en;
  auto* encode = app.add_subcommand("encode", "precompute an embedding index");
  encode->add_option("--checkpoint", en.checkpoint, "model checkpoint")->required();
  encode->add_option("--corpus", en.corpus, "sequences to index, one per line")->required();
  encode->add_option("--out", en.out, "index file path")->required();

  RankArgs rk;
  auto* rank_cmd = app.add_subcommand("rank", "rank queries against a candidate pool");
  rank_cmd->add_option("--checkpoint", rk.checkpoint, "model checkpoint")->required();
  rank_cmd->add_option("--index", rk.index, "prebuilt index (else built from --corpus)");
  rank_cmd->add_option("--corpus", rk.corpus, "candidate pool, one per line")->required();
  rank_cmd->add_option("--queries", rk.queries, "query TSV: query<TAB>gold")->required();
  rank_cmd->add_option("--k", rk.k, "report recall@k");
  rank_cmd->add_option("--out", rk.out, "metrics CSV path")->required();

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "generate the synthetic benchmark data");
  synth->add_option("--out", sy.out, "output directory")->required();
  synth->add_option("--seed", sy.seed, "generator seed");
  synth->add_option("--docs", sy.docs, "pretraining documents");
  synth->add_option("--pool-size", sy.pool_size, "ranking candidate pool size");
  synth->add_option("--train-n", sy.train_n, "training examples per task");
  synth->add_option("--eval-n", sy.eval_n, "evaluation examples per task");

  int64_t st_seed = 1234;
  auto* selftest = app.add_subcommand("selftest", "gradient checks, invariants, oracles");
  selftest->add_option("--seed", st_seed, "seed for the randomized checks");

  try {
    app.parse(argc, argv);
    if (pretrain->parsed()) return cmd_pretrain(pt);
    if (finetune->parsed()) return cmd_finetune(ft);
    if (encode->parsed()) return cmd_encode(en);
    if (rank_cmd->parsed()) return cmd_rank(rk);
    if (synth->parsed()) return cmd_synth(sy);
    if (selftest->parsed()) return cmd_selftest(static_cast<uint64_t>(st_seed));
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "[error] config: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "[error] data: " << e.what() << "\n";
    return 2;
  } catch (const NumericsError& e) {
    std::cerr << "[error] numerics: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
