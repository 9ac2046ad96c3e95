#include "crossenc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "crossenc/errors.hpp"

namespace crossenc {

namespace {

std::string numbered(char prefix, int i) {
  std::string s(1, prefix);
  if (i < 10) s += '0';
  s += std::to_string(i);
  return s;
}

// k distinct values in [0, n) by partial Fisher-Yates.
std::vector<int> distinct(int n, int k, Rng& rng) {
  std::vector<int> all(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(n - i);
    std::swap(all[static_cast<size_t>(i)], all[static_cast<size_t>(j)]);
  }
  all.resize(static_cast<size_t>(k));
  return all;
}

void validate_spec(const SynthSpec& spec) {
  if (spec.n_topics < 2 * spec.pairs_per_doc)
    throw ConfigError("synth: need at least " + std::to_string(2 * spec.pairs_per_doc) +
                      " topics");
  if (spec.n_keys < 2 || spec.n_tags < 2 || spec.n_fillers < 2 || spec.pairs_per_doc < 1)
    throw ConfigError("synth: degenerate spec");
}

std::vector<std::string> make_sequence(const SynthSpec& spec, int topic, int key, int tag,
                                       Rng& rng) {
  return {topic_word(topic), key_word(key), tag_word(tag),
          filler_word(rng.uniform_int(spec.n_fillers))};
}

std::string join(const std::vector<std::string>& words) {
  std::string s;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return s;
}

}  // namespace

std::string topic_word(int t) { return numbered('t', t); }
std::string key_word(int k) { return numbered('k', k); }
std::string tag_word(int g) { return numbered('g', g); }
std::string filler_word(int f) { return numbered('f', f); }

std::vector<std::string> synth_vocab_lines(const SynthSpec& spec) {
  std::vector<std::string> words;
  for (int t = 0; t < spec.n_topics; ++t) words.push_back(topic_word(t));
  for (int k = 0; k < spec.n_keys; ++k) words.push_back(key_word(k));
  for (int g = 0; g < spec.n_tags; ++g) words.push_back(tag_word(g));
  for (int f = 0; f < spec.n_fillers; ++f) words.push_back(filler_word(f));
  return {join(words)};
}

std::string SynthDoc::line() const {
  std::string s;
  for (size_t i = 0; i < seqs.size(); ++i) {
    if (i) s += ' ';
    s += join(seqs[i]);
  }
  return s;
}

std::vector<SynthDoc> gen_pair_docs(const SynthSpec& spec, int count, Rng& rng) {
  validate_spec(spec);
  std::vector<SynthDoc> docs;
  docs.reserve(static_cast<size_t>(count));
  const int m = 2 * spec.pairs_per_doc;

  for (int di = 0; di < count; ++di) {
    const auto topics = distinct(spec.n_topics, spec.pairs_per_doc, rng);
    const auto keys = distinct(spec.n_keys, spec.pairs_per_doc, rng);
    const auto tags = distinct(spec.n_tags, spec.pairs_per_doc, rng);

    // Build in pair order, then shuffle sequence positions.
    std::vector<std::vector<std::string>> seqs;
    std::vector<int> pair_of, topic_of;
    std::vector<bool> probe_of;
    std::vector<std::string> key_of;
    for (int p = 0; p < spec.pairs_per_doc; ++p)
      for (int side = 0; side < 2; ++side) {
        seqs.push_back(make_sequence(spec, topics[static_cast<size_t>(p)],
                                     keys[static_cast<size_t>(p)],
                                     tags[static_cast<size_t>(p)], rng));
        pair_of.push_back(p);
        probe_of.push_back(side == 1);
        topic_of.push_back(topics[static_cast<size_t>(p)]);
        key_of.push_back(key_word(keys[static_cast<size_t>(p)]));
      }

    const auto order = distinct(m, m, rng);  // full shuffle
    std::vector<int> position(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) position[static_cast<size_t>(order[static_cast<size_t>(i)])] = i;

    SynthDoc doc;
    doc.seqs.resize(static_cast<size_t>(m));
    doc.partner.assign(static_cast<size_t>(m), -1);
    doc.is_probe.assign(static_cast<size_t>(m), false);
    doc.key_slot.assign(static_cast<size_t>(m), SynthSpec::kKeySlot);
    doc.key.resize(static_cast<size_t>(m));
    doc.topic.assign(static_cast<size_t>(m), -1);
    for (int src = 0; src < m; ++src) {
      const int dst = position[static_cast<size_t>(src)];
      doc.seqs[static_cast<size_t>(dst)] = std::move(seqs[static_cast<size_t>(src)]);
      doc.is_probe[static_cast<size_t>(dst)] = probe_of[static_cast<size_t>(src)];
      doc.key[static_cast<size_t>(dst)] = key_of[static_cast<size_t>(src)];
      doc.topic[static_cast<size_t>(dst)] = topic_of[static_cast<size_t>(src)];
    }
    // Partners: the other member of the same pair.
    for (int a = 0; a < m; ++a)
      for (int b = 0; b < m; ++b)
        if (a != b && pair_of[static_cast<size_t>(order[static_cast<size_t>(a)])] ==
                          pair_of[static_cast<size_t>(order[static_cast<size_t>(b)])])
          doc.partner[static_cast<size_t>(a)] = b;
    docs.push_back(std::move(doc));
  }
  return docs;
}

void write_corpus(const std::string& path, const std::vector<SynthDoc>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("synth: cannot open " + path + " for writing");
  for (const auto& d : docs) out << d.line() << "\n";
}

RankData gen_rank_data(const SynthSpec& spec, int pool_size, int train_n, int eval_n, Rng& rng) {
  validate_spec(spec);
  if (pool_size > spec.n_topics || pool_size > spec.n_keys || pool_size > spec.n_tags)
    throw ConfigError("synth: pool larger than topic, key or tag inventory");
  RankData data;
  for (int i = 0; i < pool_size; ++i)
    data.pool.push_back(join(make_sequence(spec, i, i, i, rng)));

  auto gen = [&](int n, std::vector<RankingExample>& out) {
    for (int i = 0; i < n; ++i) {
      const int t = rng.uniform_int(pool_size);
      out.push_back({join(make_sequence(spec, t, t, t, rng)),
                     data.pool[static_cast<size_t>(t)]});
    }
  };
  gen(train_n, data.train);
  gen(eval_n, data.eval);
  return data;
}

ClsData gen_cls_data(const SynthSpec& spec, int train_n, int eval_n, Rng& rng) {
  validate_spec(spec);
  const int groups = spec.n_topics / spec.group_size;
  if (groups < 2) throw ConfigError("synth: need at least 2 topic groups");
  ClsData data;

  auto rand_seq = [&](int topic) {
    return join(make_sequence(spec, topic, rng.uniform_int(spec.n_keys),
                              rng.uniform_int(spec.n_tags), rng));
  };

  auto gen_pair = [&](int label) {
    const int t1 = rng.uniform_int(groups * spec.group_size);
    const int g1 = t1 / spec.group_size;
    int t2 = t1;
    if (label == 1) {
      // same group, different topic
      do {
        t2 = g1 * spec.group_size + rng.uniform_int(spec.group_size);
      } while (t2 == t1);
    } else if (label == 2) {
      int g2 = rng.uniform_int(groups - 1);
      if (g2 >= g1) ++g2;
      t2 = g2 * spec.group_size + rng.uniform_int(spec.group_size);
    }
    ClsExample ex;
    ex.s1 = rand_seq(t1);
    ex.s2 = rand_seq(t2);
    ex.label = label;
    return ex;
  };

  auto gen = [&](int n, std::vector<ClsExample>& out) {
    for (int i = 0; i < n; ++i) out.push_back(gen_pair(i % 3));
  };
  gen(train_n, data.train);
  gen(eval_n, data.eval);
  return data;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("synth: cannot open " + path + " for writing");
  for (const auto& l : lines) out << l << "\n";
}

void write_rank_tsv(const std::string& path, const std::vector<RankingExample>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("synth: cannot open " + path + " for writing");
  for (const auto& r : rows) out << r.query << "\t" << r.gold << "\n";
}

void write_cls_tsv(const std::string& path, const std::vector<ClsExample>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("synth: cannot open " + path + " for writing");
  for (const auto& r : rows) out << r.s1 << "\t" << r.s2 << "\t" << r.label << "\n";
}

MaskedBatch probe_masked_batch(const SynthDoc& doc, const Vocab& vocab, const ModelConfig& cfg) {
  MaskedBatch batch;
  for (size_t i = 0; i < doc.seqs.size(); ++i) {
    MaskedSequence s;
    s.offset = 0;
    for (const auto& w : doc.seqs[i]) s.input.push_back(vocab.token_to_id(w));
    s.labels.assign(s.input.size(), -1);
    if (doc.is_probe[i]) {
      const int slot = doc.key_slot[i];
      s.labels[static_cast<size_t>(slot)] = s.input[static_cast<size_t>(slot)];
      s.input[static_cast<size_t>(slot)] = Vocab::kMask;
      s.n_masked = 1;
    }
    if (s.len() > cfg.seq_len)
      throw DataError("synth: sequence longer than configured seq_len");
    batch.sequences.push_back(std::move(s));
  }
  return batch;
}

MechanismEval eval_mechanism(const Model& model, const Vocab& vocab,
                             const std::vector<SynthDoc>& docs) {
  if (docs.empty()) throw DataError("eval_mechanism: no documents");
  MechanismEval ev;
  double loss_sum = 0.0;
  int attn_hits = 0;
  ForwardCtx ctx;  // eval mode

  for (const auto& doc : docs) {
    auto batch = probe_masked_batch(doc, vocab, model.cfg);
    auto out = pretrain_forward(model, batch, ctx);
    const int probes_here = batch.total_masked();
    loss_sum += static_cast<double>(out.loss->value.at(0, 0)) * probes_here;
    ev.probes += probes_here;

    if (model.cfg.mode == Mode::cross) {
      auto mean = mean_attention(out.attn);
      const int m = mean->value.rows();
      for (int i = 0; i < m; ++i) {
        if (!doc.is_probe[static_cast<size_t>(i)]) continue;
        int best = 0;
        for (int j = 1; j < m; ++j)
          if (mean->value.at(i, j) > mean->value.at(i, best)) best = j;
        if (best == doc.partner[static_cast<size_t>(i)]) ++attn_hits;
      }
    }
  }
  ev.key_loss = loss_sum / std::max(1, ev.probes);
  ev.attention_accuracy =
      model.cfg.mode == Mode::cross ? static_cast<double>(attn_hits) / std::max(1, ev.probes) : 0.0;
  return ev;
}

}  // namespace crossenc
