#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "crossenc/train.hpp"

using namespace crossenc;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.cross_heads = 2;
  cfg.n_special = 2;
  cfg.seq_len = 8;
  cfg.max_pos = 16;
  cfg.m_max = 4;
  cfg.vocab_size = 512;
  cfg.dropout = 0.0f;
  cfg.mask_rate = 0.15f;
  cfg.lr = 2e-3f;
  cfg.warmup_steps = 2;
  cfg.max_steps = 8;
  cfg.batch_size = 2;
  cfg.seed = 71;
  return cfg;
}

std::vector<std::string> tiny_corpus() {
  SynthSpec spec;
  Rng rng(555);
  auto docs = gen_pair_docs(spec, 30, rng);
  std::vector<std::string> lines;
  for (const auto& d : docs) lines.push_back(d.line());
  return lines;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("crossenc_train_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
  static inline int counter = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

MaskedBatch fixed_batch() {
  MaskedBatch b;
  MaskedSequence s0;
  s0.input = {10, 1, 12, 13, 14};
  s0.labels = {-1, 11, -1, -1, -1};
  s0.n_masked = 1;
  MaskedSequence s1;
  s1.input = {20, 21, 1, 23};
  s1.labels = {-1, -1, 22, -1};
  s1.n_masked = 1;
  s1.offset = 6;
  b.sequences = {s0, s1};
  return b;
}

}  // namespace

TEST_CASE("run_overfit drives the loss down on a fixed batch") {
  auto cfg = tiny_config();
  Rng rng(cfg.seed);
  auto model = Model::init(cfg, rng);
  auto batch = fixed_batch();
  ForwardCtx ctx;
  const float before = pretrain_forward(model, batch, ctx).loss->value.at(0, 0);
  const float after = run_overfit(model, batch, 150, 3e-3f);
  CHECK(before > 2.0f);
  CHECK(after < 0.5f * before);
}

TEST_CASE("run_pretrain writes vocab, loss log and checkpoints") {
  TempDir tmp;
  auto cfg = tiny_config();
  auto run = run_pretrain(cfg, tiny_corpus(), tmp.sub("out"));

  CHECK(fs::exists(tmp.sub("out") + "/vocab.txt"));
  CHECK(fs::exists(tmp.sub("out") + "/loss_log.csv"));
  CHECK(fs::exists(tmp.sub("out") + "/checkpoint.ckpt"));
  CHECK(fs::exists(run.final_checkpoint));
  CHECK(std::isfinite(run.final_loss));

  const auto log = slurp(tmp.sub("out") + "/loss_log.csv");
  std::istringstream is(log);
  std::string line;
  std::getline(is, line);
  CHECK(line == "step,lr,loss,tokens_masked");
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == cfg.max_steps);

  // The final checkpoint must reload and carry the trained vocabulary.
  auto loaded = load_checkpoint(run.final_checkpoint);
  CHECK(loaded.vocab.fingerprint() == run.vocab.fingerprint());
  CHECK(loaded.model.cfg.vocab_size == run.model.cfg.vocab_size);
}

TEST_CASE("run_pretrain_pairs streams masked pair documents") {
  TempDir tmp;
  auto cfg = tiny_config();
  SynthSpec spec;
  PairPretrainOpts opts;
  opts.steps = 6;
  opts.docs_per_step = 2;
  opts.warmup_steps = 2;

  auto run = run_pretrain_pairs(cfg, spec, opts, tmp.sub("a"));
  CHECK(std::isfinite(run.final_loss));
  CHECK(run.vocab.size() ==
        spec.n_topics + spec.n_keys + spec.n_tags + spec.n_fillers + run.vocab.reserved());
  CHECK(fs::exists(tmp.sub("a") + "/loss_log.csv"));

  auto again = run_pretrain_pairs(cfg, spec, opts, tmp.sub("b"));
  CHECK(slurp(tmp.sub("a") + "/loss_log.csv") == slurp(tmp.sub("b") + "/loss_log.csv"));

  ModelConfig small = cfg;
  small.vocab_size = 32;  // cannot hold the inventories
  CHECK_THROWS_AS(run_pretrain_pairs(small, spec, opts, ""), ConfigError);
}

TEST_CASE("run_pretrain is bit-deterministic per seed") {
  TempDir tmp;
  auto cfg = tiny_config();
  auto lines = tiny_corpus();
  run_pretrain(cfg, lines, tmp.sub("a"));
  run_pretrain(cfg, lines, tmp.sub("b"));
  CHECK(slurp(tmp.sub("a") + "/loss_log.csv") == slurp(tmp.sub("b") + "/loss_log.csv"));

  ModelConfig other = cfg;
  other.seed = cfg.seed + 1;
  run_pretrain(other, lines, tmp.sub("c"));
  CHECK(slurp(tmp.sub("a") + "/loss_log.csv") != slurp(tmp.sub("c") + "/loss_log.csv"));
}

TEST_CASE("a numerically exploding run dumps a postmortem checkpoint") {
  TempDir tmp;
  auto cfg = tiny_config();
  cfg.lr = 1e20f;  // guaranteed overflow within a few steps
  cfg.warmup_steps = 0;
  cfg.max_steps = 6;
  CHECK_THROWS_AS(run_pretrain(cfg, tiny_corpus(), tmp.sub("out")), NumericsError);
  CHECK(fs::exists(tmp.sub("out") + "/nan_dump.ckpt"));
}

TEST_CASE("run_pretrain rejects an empty corpus") {
  TempDir tmp;
  auto cfg = tiny_config();
  CHECK_THROWS_AS(run_pretrain(cfg, {}, tmp.sub("out")), DataError);
}

TEST_CASE("rank finetuning runs and logs, and evaluation bounds hold") {
  TempDir tmp;
  auto cfg = tiny_config();
  Rng rng(cfg.seed);

  SynthSpec spec;
  Rng gen(808);
  auto data = gen_rank_data(spec, 8, 30, 10, gen);
  auto corpus = tiny_corpus();
  Vocab vocab = Vocab::build(corpus, 1, cfg.vocab_size, cfg.n_special);
  ModelConfig mcfg = cfg;
  mcfg.vocab_size = vocab.size();
  auto model = Model::init(mcfg, rng);

  RankFinetuneOpts opts;
  opts.steps = 25;
  opts.lr = 1e-3f;
  opts.k_negatives = 5;
  const float last = run_finetune_rank(model, vocab, data.train, data.pool, opts, tmp.sub("ft"));
  CHECK(std::isfinite(last));
  CHECK(fs::exists(tmp.sub("ft") + "/loss_log.csv"));

  auto ev = eval_ranking(model, vocab, data.pool, data.eval);
  CHECK(ev.rows.size() == data.eval.size());
  CHECK(ev.recall1 >= 0.0);
  CHECK(ev.recall1 <= ev.recall5);
  CHECK(ev.recall5 <= ev.recall20);
  CHECK(ev.recall20 <= 1.0);
  for (const auto& row : ev.rows) {
    CHECK(row.gold_rank >= 1);
    CHECK(row.gold_rank <= static_cast<int>(data.pool.size()));
  }
}

TEST_CASE("rank finetuning validates its inputs") {
  TempDir tmp;
  auto cfg = tiny_config();
  Rng rng(cfg.seed);
  Vocab vocab = Vocab::build({"a b c"}, 1, 64, cfg.n_special);
  ModelConfig mcfg = cfg;
  mcfg.vocab_size = vocab.size();
  auto model = Model::init(mcfg, rng);
  RankFinetuneOpts opts;
  CHECK_THROWS_AS(run_finetune_rank(model, vocab, {}, {"a", "b"}, opts, ""), DataError);
  CHECK_THROWS_AS(run_finetune_rank(model, vocab, {{"q", "a"}}, {"a"}, opts, ""), DataError);
  // Gold text absent from the pool.
  CHECK_THROWS_AS(run_finetune_rank(model, vocab, {{"q", "zz"}}, {"a", "b"}, opts, ""),
                  DataError);
}

TEST_CASE("classification finetuning trains the head and evaluates") {
  TempDir tmp;
  auto cfg = tiny_config();
  Rng rng(cfg.seed);

  SynthSpec spec;
  Rng gen(909);
  auto data = gen_cls_data(spec, 30, 12, gen);
  std::vector<std::string> vocab_lines;
  for (const auto& ex : data.train) vocab_lines.push_back(ex.s1 + " " + ex.s2);
  Vocab vocab = Vocab::build(vocab_lines, 1, cfg.vocab_size, cfg.n_special);
  ModelConfig mcfg = cfg;
  mcfg.vocab_size = vocab.size();
  auto model = Model::init(mcfg, rng);

  ClsFinetuneOpts opts;
  opts.steps = 25;
  opts.lr = 1e-3f;
  auto head = run_finetune_cls(model, vocab, data.train, opts, tmp.sub("ft"));
  CHECK(head.classes == 3);
  CHECK(fs::exists(tmp.sub("ft") + "/loss_log.csv"));

  const double acc = eval_classification(model, head, vocab, data.eval);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);

  ClsFinetuneOpts bad = opts;
  bad.classes = 2;  // labels reach 2, so class count 2 is inconsistent
  CHECK_THROWS_AS(run_finetune_cls(model, vocab, data.train, bad, ""), DataError);
  CHECK_THROWS_AS(run_finetune_cls(model, vocab, {}, opts, ""), DataError);
}

TEST_CASE("finetuning is deterministic per seed") {
  TempDir tmp;
  auto cfg = tiny_config();

  SynthSpec spec;
  Rng gen(313);
  auto data = gen_rank_data(spec, 8, 20, 5, gen);
  auto corpus = tiny_corpus();
  Vocab vocab = Vocab::build(corpus, 1, cfg.vocab_size, cfg.n_special);
  ModelConfig mcfg = cfg;
  mcfg.vocab_size = vocab.size();

  RankFinetuneOpts opts;
  opts.steps = 15;
  opts.lr = 1e-3f;
  for (const char* dir : {"x", "y"}) {
    Rng rng(mcfg.seed);
    auto model = Model::init(mcfg, rng);
    run_finetune_rank(model, vocab, data.train, data.pool, opts, tmp.sub(dir));
  }
  CHECK(slurp(tmp.sub("x") + "/loss_log.csv") == slurp(tmp.sub("y") + "/loss_log.csv"));
}
