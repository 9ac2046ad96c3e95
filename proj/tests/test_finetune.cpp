#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "crossenc/finetune.hpp"

using namespace crossenc;
namespace fs = std::filesystem;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.cross_heads = 2;
  cfg.n_special = 2;
  cfg.seq_len = 6;
  cfg.max_pos = 16;
  cfg.m_max = 4;
  cfg.vocab_size = 50;
  cfg.dropout = 0.0f;
  cfg.seed = 99;
  return cfg;
}

MaskedSequence plain(std::vector<int> ids) {
  MaskedSequence s;
  s.labels.assign(ids.size(), -1);
  s.input = std::move(ids);
  return s;
}

AttentionSet known_set() {
  AttentionSet a;
  a.m = 2;
  a.n_special = 1;
  a.depth = 1;
  a.heads = 2;
  a.mats.push_back(make_const(Tensor::from(2, 2, {0.8f, 0.2f, 0.3f, 0.7f})));
  a.mats.push_back(make_const(Tensor::from(2, 2, {0.2f, 0.8f, 0.5f, 0.5f})));
  return a;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("crossenc_ft_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name, const std::string& content) const {
    const std::string p = (path / name).string();
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
  }
  static inline int counter = 0;
};

}  // namespace

TEST_CASE("mean_attention is the elementwise mean") {
  auto mean = mean_attention(known_set());
  CHECK(mean->value.at(0, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(mean->value.at(0, 1) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(mean->value.at(1, 0) == doctest::Approx(0.4).epsilon(1e-6));
  CHECK(mean->value.at(1, 1) == doctest::Approx(0.6).epsilon(1e-6));
  // Rows stay probability vectors.
  CHECK(mean->value.at(0, 0) + mean->value.at(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("mean_attention rejects an empty set") {
  AttentionSet a;
  CHECK_THROWS_AS(mean_attention(a), NumericsError);
}

TEST_CASE("ranking_loss on uniform attention is log m") {
  AttentionSet a;
  a.m = 4;
  a.n_special = 1;
  a.depth = 1;
  a.heads = 1;
  a.mats.push_back(make_const(Tensor::full(4, 4, 0.25f)));
  auto loss = ranking_loss(a, 2);
  CHECK(loss->value.at(0, 0) == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("ranking_loss is zero when the gold takes all the weight") {
  AttentionSet a;
  a.m = 2;
  a.n_special = 1;
  a.depth = 1;
  a.heads = 1;
  a.mats.push_back(make_const(Tensor::from(2, 2, {0.0f, 1.0f, 1.0f, 0.0f})));
  CHECK(ranking_loss(a, 1)->value.at(0, 0) == doctest::Approx(0.0));
}

TEST_CASE("ranking_loss clamps a zero gold weight instead of producing inf") {
  AttentionSet a;
  a.m = 2;
  a.n_special = 1;
  a.depth = 1;
  a.heads = 1;
  a.mats.push_back(make_const(Tensor::from(2, 2, {1.0f, 0.0f, 0.0f, 1.0f})));
  auto loss = ranking_loss(a, 1);
  CHECK(std::isfinite(loss->value.at(0, 0)));
  CHECK(loss->value.at(0, 0) == doctest::Approx(-std::log(1e-12)).epsilon(1e-4));
}

TEST_CASE("ranking_loss rejects a gold index outside the candidates") {
  auto a = known_set();
  CHECK_THROWS_AS(ranking_loss(a, 0), DataError);   // row 0 is the question
  CHECK_THROWS_AS(ranking_loss(a, 2), DataError);   // beyond m-1
  CHECK_THROWS_AS(ranking_loss(a, -1), DataError);
}

TEST_CASE("sample_negatives yields k distinct non-gold candidates plus the gold") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    auto s = sample_negatives(20, 7, 5, rng);
    CHECK(s.candidates.size() == 6);
    CHECK(s.gold_index >= 0);
    CHECK(s.gold_index < 6);
    CHECK(s.candidates[static_cast<size_t>(s.gold_index)] == 7);
    std::set<int> uniq(s.candidates.begin(), s.candidates.end());
    CHECK(uniq.size() == 6);
    int golds = 0;
    for (int c : s.candidates) {
      CHECK(c >= 0);
      CHECK(c < 20);
      if (c == 7) ++golds;
    }
    CHECK(golds == 1);
  }
}

TEST_CASE("sample_negatives is deterministic per seed") {
  Rng a(77), b(77);
  auto sa = sample_negatives(10, 3, 4, a);
  auto sb = sample_negatives(10, 3, 4, b);
  CHECK(sa.candidates == sb.candidates);
  CHECK(sa.gold_index == sb.gold_index);
}

TEST_CASE("sample_negatives validates gold and k") {
  Rng rng(1);
  CHECK_THROWS_AS(sample_negatives(5, 5, 2, rng), DataError);
  CHECK_THROWS_AS(sample_negatives(5, -1, 2, rng), DataError);
  CHECK_THROWS_AS(sample_negatives(5, 0, 5, rng), DataError);  // only 4 non-gold
  CHECK_THROWS_AS(sample_negatives(5, 0, 0, rng), DataError);
}

TEST_CASE("finetune_sequence truncates to seq_len at offset 0") {
  auto cfg = toy_config();
  std::vector<int> tokens;
  for (int i = 0; i < 10; ++i) tokens.push_back(10 + i);
  auto s = finetune_sequence(tokens, cfg);
  CHECK(s.len() == cfg.seq_len);
  CHECK(s.offset == 0);
  CHECK(s.n_masked == 0);
  for (int i = 0; i < s.len(); ++i) {
    CHECK(s.input[static_cast<size_t>(i)] == 10 + i);
    CHECK(s.labels[static_cast<size_t>(i)] == -1);
  }
  CHECK_THROWS_AS(finetune_sequence({}, cfg), DataError);
}

TEST_CASE("make_ranking_batch puts the question first and the gold somewhere after") {
  auto cfg = toy_config();
  Rng rng(5);
  std::vector<std::vector<int>> pool;
  for (int i = 0; i < 8; ++i) pool.push_back({20 + i, 30 + i});
  std::vector<int> query = {40, 41, 42};
  auto rb = make_ranking_batch(query, pool, 3, 2, cfg, rng);
  CHECK(rb.batch.sequences.size() == 4);  // question + gold + 2 negatives
  CHECK(rb.batch.sequences[0].input == query);
  CHECK(rb.gold_index >= 1);
  CHECK(rb.gold_index < 4);
  CHECK(rb.batch.sequences[static_cast<size_t>(rb.gold_index)].input == pool[3]);
}

TEST_CASE("classifier head shape and init guard") {
  auto cfg = toy_config();
  Rng rng(8);
  auto head = ClassifierHead::init(3, cfg, rng);
  CHECK(head.w->value.rows() == 3);
  CHECK(head.w->value.cols() == 2 * cfg.n_special * cfg.d);
  CHECK_THROWS_AS(ClassifierHead::init(1, cfg, rng), ConfigError);
}

TEST_CASE("classify returns 1 x classes logits and a near-uniform untrained loss") {
  auto cfg = toy_config();
  Rng rng(cfg.seed);
  auto model = Model::init(cfg, rng);
  auto head = ClassifierHead::init(3, cfg, rng);

  MaskedBatch pair;
  pair.sequences.push_back(plain({10, 11, 12}));
  pair.sequences.push_back(plain({13, 14}));
  ForwardCtx ctx;
  auto [logits, loss] = classify(model, head, pair, 1, ctx);
  CHECK(logits->value.rows() == 1);
  CHECK(logits->value.cols() == 3);
  // Small head weights keep the untrained logits near zero, so the loss
  // stays close to the uniform baseline.
  CHECK(std::abs(loss->value.at(0, 0) - std::log(3.0f)) < 0.3f);
}

TEST_CASE("classify skips the loss for label -1 and rejects bad labels") {
  auto cfg = toy_config();
  Rng rng(cfg.seed);
  auto model = Model::init(cfg, rng);
  auto head = ClassifierHead::init(3, cfg, rng);
  MaskedBatch pair;
  pair.sequences.push_back(plain({10, 11}));
  pair.sequences.push_back(plain({12, 13}));
  ForwardCtx ctx;
  auto [logits, loss] = classify(model, head, pair, -1, ctx);
  CHECK(logits != nullptr);
  CHECK(loss == nullptr);
  CHECK_THROWS_AS(classify(model, head, pair, 3, ctx), DataError);
  pair.sequences.push_back(plain({14}));
  CHECK_THROWS_AS(classify(model, head, pair, 0, ctx), DataError);
}

TEST_CASE("classification loss reaches the head weights") {
  auto cfg = toy_config();
  Rng rng(cfg.seed);
  auto model = Model::init(cfg, rng);
  auto head = ClassifierHead::init(3, cfg, rng);
  MaskedBatch pair;
  pair.sequences.push_back(plain({10, 11, 12}));
  pair.sequences.push_back(plain({13, 14}));
  ForwardCtx ctx;
  auto [logits, loss] = classify(model, head, pair, 2, ctx);
  backward(loss);
  double norm = 0;
  for (float g : head.w->grad.data) norm += std::abs(g);
  CHECK(norm > 0.0);
  CHECK(model.enc.tok_emb->grad.data.size() > 0);
}

TEST_CASE("ranking dataset loader handles 2 and 3 column rows") {
  TempDir tmp;
  const auto path = tmp.file("rank.tsv", "q one\tg one\nq two\tg two\tpool.txt\n");
  std::string pool;
  auto rows = load_ranking_dataset(path, &pool);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].query == "q one");
  CHECK(rows[1].gold == "g two");
  CHECK(pool == "pool.txt");
}

TEST_CASE("ranking dataset loader rejects malformed rows") {
  TempDir tmp;
  CHECK_THROWS_AS(load_ranking_dataset(tmp.file("a.tsv", "only one column\n"), nullptr),
                  DataError);
  CHECK_THROWS_AS(load_ranking_dataset(tmp.file("b.tsv", "q\t\n"), nullptr), DataError);
  CHECK_THROWS_AS(
      load_ranking_dataset(tmp.file("c.tsv", "q\tg\tpool1\nq\tg\tpool2\n"), nullptr),
      DataError);
  CHECK_THROWS_AS(load_ranking_dataset(tmp.file("d.tsv", ""), nullptr), DataError);
}

TEST_CASE("classification dataset loader parses labels strictly") {
  TempDir tmp;
  auto rows = load_cls_dataset(tmp.file("good.tsv", "a b\tc d\t0\ne\tf\t2\n"));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].s1 == "a b");
  CHECK(rows[1].label == 2);
  CHECK_THROWS_AS(load_cls_dataset(tmp.file("bad1.tsv", "a\tb\tx\n")), DataError);
  CHECK_THROWS_AS(load_cls_dataset(tmp.file("bad2.tsv", "a\tb\t1extra\n")), DataError);
  CHECK_THROWS_AS(load_cls_dataset(tmp.file("bad3.tsv", "a\tb\t-1\n")), DataError);
  CHECK_THROWS_AS(load_cls_dataset(tmp.file("bad4.tsv", "a\tb\n")), DataError);
}
