#include "crossenc/finetune.hpp"

#include <fstream>

#include "crossenc/errors.hpp"
#include "crossenc/log.hpp"

namespace crossenc {

Var mean_attention(const AttentionSet& attn) {
  if (attn.mats.empty()) throw NumericsError("mean_attention: empty attention set");
  return mean_vars(attn.mats);
}

Var ranking_loss(const AttentionSet& attn, int gold) {
  if (attn.m < 2) throw DataError("ranking_loss: need at least 2 sequences");
  if (gold < 1 || gold >= attn.m)
    throw DataError("ranking_loss: gold index " + std::to_string(gold) + " outside [1, " +
                    std::to_string(attn.m - 1) + "]");
  auto mean = mean_attention(attn);
  auto p = pick(mean, 0, gold);
  if (p->value.at(0, 0) <= 1e-12f)
    log_warn("ranking_loss: gold attention weight underflowed, clamping at 1e-12");
  return scale(log_clamped(p, 1e-12f), -1.0f);
}

NegativeSample sample_negatives(int pool_size, int gold, int k, Rng& rng) {
  if (gold < 0 || gold >= pool_size)
    throw DataError("sample_negatives: gold " + std::to_string(gold) + " outside pool of " +
                    std::to_string(pool_size));
  if (k < 1 || k > pool_size - 1)
    throw DataError("sample_negatives: need " + std::to_string(k) + " negatives from " +
                    std::to_string(pool_size - 1) + " non-gold sequences");

  // Partial Fisher-Yates over the pool minus the gold.
  std::vector<int> others;
  others.reserve(static_cast<size_t>(pool_size) - 1);
  for (int i = 0; i < pool_size; ++i)
    if (i != gold) others.push_back(i);
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(static_cast<int>(others.size()) - i);
    std::swap(others[static_cast<size_t>(i)], others[static_cast<size_t>(j)]);
  }

  NegativeSample out;
  out.candidates.assign(others.begin(), others.begin() + k);
  out.gold_index = rng.uniform_int(k + 1);
  out.candidates.insert(out.candidates.begin() + out.gold_index, gold);
  return out;
}

MaskedSequence finetune_sequence(const std::vector<int>& tokens, const ModelConfig& cfg) {
  if (tokens.empty()) throw DataError("finetune_sequence: empty sequence");
  MaskedSequence s;
  const size_t keep = std::min(tokens.size(), static_cast<size_t>(cfg.seq_len));
  s.input.assign(tokens.begin(), tokens.begin() + static_cast<long>(keep));
  s.labels.assign(keep, -1);
  s.offset = 0;
  return s;
}

RankingBatch make_ranking_batch(const std::vector<int>& query,
                                const std::vector<std::vector<int>>& pool, int gold, int k,
                                const ModelConfig& cfg, Rng& rng) {
  auto sample = sample_negatives(static_cast<int>(pool.size()), gold, k, rng);
  RankingBatch out;
  out.batch.sequences.push_back(finetune_sequence(query, cfg));
  for (int idx : sample.candidates)
    out.batch.sequences.push_back(finetune_sequence(pool[static_cast<size_t>(idx)], cfg));
  out.gold_index = sample.gold_index + 1;  // shift past the question at 0
  return out;
}

ClassifierHead ClassifierHead::init(int classes, const ModelConfig& cfg, Rng& rng) {
  if (classes < 2) throw ConfigError("ClassifierHead: need at least 2 classes");
  ClassifierHead h;
  h.classes = classes;
  h.w = make_param(Tensor::randn(classes, 2 * cfg.n_special * cfg.d, 0.02f, rng), "cls_w");
  return h;
}

std::pair<Var, Var> classify(const Model& model, const ClassifierHead& head,
                             const MaskedBatch& pair, int label, const ForwardCtx& ctx) {
  if (pair.sequences.size() != 2)
    throw DataError("classify: expected exactly 2 sequences, got " +
                    std::to_string(pair.sequences.size()));
  auto ce = cross_forward(model, pair, ctx);
  // C-bar: all cross outputs stacked, shape 2N x d, then flattened to 1 x 2Nd.
  auto stacked = ce.c_list.size() == 1 ? ce.c_list[0] : concat_rows(ce.c_list);
  auto flat = flatten_row(stacked);
  auto logits = matmul_nt(flat, head.w);
  if (label == -1) return {logits, Var{}};
  if (label < 0 || label >= head.classes)
    throw DataError("classify: label " + std::to_string(label) + " outside [0, " +
                    std::to_string(head.classes - 1) + "]");
  return {logits, cross_entropy_mean(logits, {label})};
}

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      cols.push_back(line.substr(start));
      return cols;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::vector<std::string> read_tsv_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("dataset: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw DataError("dataset: no rows in " + path);
  return lines;
}

}  // namespace

std::vector<RankingExample> load_ranking_dataset(const std::string& path, std::string* pool_ref) {
  std::vector<RankingExample> out;
  std::string pool;
  size_t row = 0;
  for (const auto& line : read_tsv_lines(path)) {
    ++row;
    auto cols = split_tabs(line);
    if (cols.size() != 2 && cols.size() != 3)
      throw DataError("ranking dataset: row " + std::to_string(row) + " has " +
                      std::to_string(cols.size()) + " columns, want 2 or 3");
    if (cols[0].empty() || cols[1].empty())
      throw DataError("ranking dataset: empty field at row " + std::to_string(row));
    if (cols.size() == 3) {
      if (pool.empty())
        pool = cols[2];
      else if (pool != cols[2])
        throw DataError("ranking dataset: conflicting pool references at row " +
                        std::to_string(row));
    }
    out.push_back({cols[0], cols[1]});
  }
  if (pool_ref) *pool_ref = pool;
  return out;
}

std::vector<ClsExample> load_cls_dataset(const std::string& path) {
  std::vector<ClsExample> out;
  size_t row = 0;
  for (const auto& line : read_tsv_lines(path)) {
    ++row;
    auto cols = split_tabs(line);
    if (cols.size() != 3)
      throw DataError("classification dataset: row " + std::to_string(row) + " has " +
                      std::to_string(cols.size()) + " columns, want 3");
    ClsExample ex;
    ex.s1 = cols[0];
    ex.s2 = cols[1];
    try {
      size_t used = 0;
      ex.label = std::stoi(cols[2], &used);
      if (used != cols[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("classification dataset: bad label '" + cols[2] + "' at row " +
                      std::to_string(row));
    }
    if (ex.label < 0)
      throw DataError("classification dataset: negative label at row " + std::to_string(row));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace crossenc
