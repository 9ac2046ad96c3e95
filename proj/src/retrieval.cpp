#include "crossenc/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "crossenc/errors.hpp"

namespace crossenc {

using nlohmann::json;

std::string model_fingerprint(const Model& model) {
  const std::string cfg = config_to_json(model.cfg);
  uint64_t h = fnv1a64(cfg.data(), cfg.size());
  for (const auto& p : model.param_list())
    h = fnv1a64(p->value.data.data(), p->value.data.size() * sizeof(float), h);
  return hex64(h);
}

namespace {

// E and E W^K_n rows for one already-encoded sequence.
void project_entry(const Model& model, const Var& e_var, Tensor& e_out, Tensor& k_out) {
  const int n = model.cfg.n_special, d = model.cfg.d;
  e_out = e_var->value;
  k_out = Tensor(n, d);
  for (int i = 0; i < n; ++i) {
    auto row = slice_rows(e_var, i, i + 1);
    auto k = matmul(row, model.cross.per_token[static_cast<size_t>(i)][0].wk);
    for (int c = 0; c < d; ++c) k_out.at(i, c) = k->value.at(0, c);
  }
}

}  // namespace

EmbeddingIndex build_index(const Model& model, const std::vector<std::vector<int>>& sequences,
                           const std::vector<int64_t>& seq_ids) {
  if (model.cfg.mode != Mode::cross)
    throw ConfigError("build_index: requires a cross-thought model");
  if (sequences.empty()) throw DataError("build_index: no sequences");
  if (sequences.size() != seq_ids.size())
    throw DataError("build_index: " + std::to_string(seq_ids.size()) + " ids for " +
                    std::to_string(sequences.size()) + " sequences");

  EmbeddingIndex idx;
  idx.fingerprint = model_fingerprint(model);
  idx.n_special = model.cfg.n_special;
  idx.d = model.cfg.d;
  idx.heads = model.cfg.cross_heads;
  idx.ids = seq_ids;
  idx.e.resize(sequences.size());
  idx.kcache.resize(sequences.size());

  ForwardCtx ctx;  // eval mode
  for (size_t i = 0; i < sequences.size(); ++i) {
    auto enc = encode(model.enc, model.cfg, finetune_sequence(sequences[i], model.cfg), ctx);
    project_entry(model, enc.e, idx.e[i], idx.kcache[i]);
  }
  return idx;
}

void EmbeddingIndex::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("index: cannot open " + path + " for writing");
  json header;
  header["version"] = 1;
  header["fingerprint"] = fingerprint;
  header["n_special"] = n_special;
  header["d"] = d;
  header["heads"] = heads;
  header["count"] = ids.size();
  header["ids"] = ids;
  out << header.dump() << "\n";
  for (size_t i = 0; i < ids.size(); ++i) {
    out.write(reinterpret_cast<const char*>(e[i].data.data()),
              static_cast<std::streamsize>(e[i].data.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(kcache[i].data.data()),
              static_cast<std::streamsize>(kcache[i].data.size() * sizeof(float)));
  }
  if (!out) throw DataError("index: write failed for " + path);
}

EmbeddingIndex EmbeddingIndex::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("index: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError("index: missing header in " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("index: bad header: ") + e.what());
  }
  if (header.value("version", 0) != 1) throw DataError("index: unsupported version");

  EmbeddingIndex idx;
  idx.fingerprint = header.value("fingerprint", "");
  idx.n_special = header.value("n_special", 0);
  idx.d = header.value("d", 0);
  idx.heads = header.value("heads", 0);
  idx.ids = header.value("ids", std::vector<int64_t>{});
  if (idx.n_special < 1 || idx.d < 1 || idx.heads < 1 || idx.d % idx.heads != 0)
    throw DataError("index: malformed dimensions in header");
  if (idx.ids.size() != header.value("count", size_t{0}))
    throw DataError("index: id count disagrees with header count");

  idx.e.resize(idx.ids.size());
  idx.kcache.resize(idx.ids.size());
  for (size_t i = 0; i < idx.ids.size(); ++i) {
    idx.e[i] = Tensor(idx.n_special, idx.d);
    idx.kcache[i] = Tensor(idx.n_special, idx.d);
    in.read(reinterpret_cast<char*>(idx.e[i].data.data()),
            static_cast<std::streamsize>(idx.e[i].data.size() * sizeof(float)));
    in.read(reinterpret_cast<char*>(idx.kcache[i].data.data()),
            static_cast<std::streamsize>(idx.kcache[i].data.size() * sizeof(float)));
    if (!in) throw DataError("index: truncated blob in " + path);
  }
  return idx;
}

RankResult rank(const Model& model, const EmbeddingIndex& index, const std::vector<int>& query,
                int k, int64_t gold_id) {
  if (index.size() == 0) throw DataError("rank: empty index");
  if (k < 1 || static_cast<size_t>(k) > index.size())
    throw DataError("rank: k = " + std::to_string(k) + " outside [1, " +
                    std::to_string(index.size()) + "]");
  if (index.fingerprint != model_fingerprint(model))
    throw DataError("rank: index fingerprint does not match the model checkpoint");

  const int n = model.cfg.n_special, d = model.cfg.d, heads = model.cfg.cross_heads;
  const int dh = d / heads;
  const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(dh));

  // Query-side projections q_n = E_q[n] W^Q_n, done once.
  ForwardCtx ctx;
  auto enc = encode(model.enc, model.cfg, finetune_sequence(query, model.cfg), ctx);
  Tensor q(n, d);
  for (int i = 0; i < n; ++i) {
    auto row = slice_rows(enc.e, i, i + 1);
    auto proj = matmul(row, model.cross.per_token[static_cast<size_t>(i)][0].wq);
    for (int c = 0; c < d; ++c) q.at(i, c) = proj->value.at(0, c);
  }

  std::vector<std::pair<float, int64_t>> scored(index.size());
  for (size_t c = 0; c < index.size(); ++c) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i)
      for (int h = 0; h < heads; ++h) {
        double dot = 0.0;
        for (int j = h * dh; j < (h + 1) * dh; ++j)
          dot += static_cast<double>(q.at(i, j)) * index.kcache[c].at(i, j);
        sum += dot * inv_sqrt;
      }
    scored[c] = {static_cast<float>(sum / (n * heads)), index.ids[c]};
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  RankResult out;
  for (int i = 0; i < k; ++i) {
    out.ids.push_back(scored[static_cast<size_t>(i)].second);
    out.scores.push_back(scored[static_cast<size_t>(i)].first);
  }
  if (gold_id >= 0) {
    for (size_t i = 0; i < scored.size(); ++i)
      if (scored[i].second == gold_id) {
        out.gold_rank = static_cast<int>(i) + 1;
        break;
      }
  }
  return out;
}

double recall_at_k(const std::vector<int>& gold_ranks, int k) {
  if (k < 1) throw DataError("recall_at_k: k must be >= 1");
  if (gold_ranks.empty()) return 0.0;
  size_t hit = 0;
  for (int r : gold_ranks)
    if (r >= 1 && r <= k) ++hit;
  return static_cast<double>(hit) / static_cast<double>(gold_ranks.size());
}

void write_rank_metrics(const std::string& path, const std::vector<RankMetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("metrics: cannot open " + path + " for writing");
  out << "query_id,gold_rank,recall@1,recall@5,recall@20\n";
  for (const auto& r : rows) {
    const auto hit = [&](int k) { return (r.gold_rank >= 1 && r.gold_rank <= k) ? 1 : 0; };
    out << r.query_id << "," << r.gold_rank << "," << hit(1) << "," << hit(5) << "," << hit(20)
        << "\n";
  }
}

}  // namespace crossenc
