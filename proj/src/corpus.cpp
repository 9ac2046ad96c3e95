#include "crossenc/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "crossenc/errors.hpp"
#include "crossenc/log.hpp"

namespace crossenc {

using nlohmann::json;

std::vector<std::string> Vocab::split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

Vocab Vocab::build(const std::vector<std::string>& documents, int min_count, int max_size,
                   int n_special) {
  if (documents.empty()) throw DataError("build_vocab: empty corpus");
  if (n_special < 1) throw ConfigError("build_vocab: n_special must be >= 1");
  std::unordered_map<std::string, int64_t> counts;
  bool any = false;
  for (const auto& doc : documents) {
    for (auto& w : split_words(doc)) {
      ++counts[w];
      any = true;
    }
  }
  if (!any) throw DataError("build_vocab: corpus contains no words");

  std::vector<std::pair<std::string, int64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  v.n_special_ = n_special;
  const int capacity = max_size - v.reserved();
  for (const auto& [word, count] : ranked) {
    if (count < min_count) break;
    if (static_cast<int>(v.words_.size()) >= capacity) break;
    v.words_.push_back(word);
  }
  v.rebuild_index();
  return v;
}

void Vocab::rebuild_index() {
  index_.clear();
  for (size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = reserved() + static_cast<int>(i);
}

int Vocab::token_to_id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::id_to_token(int id) const {
  static const std::string kPadStr = "<pad>", kMaskStr = "<mask>", kUnkStr = "<unk>";
  static thread_local std::string special;
  if (id == kPad) return kPadStr;
  if (id == kMask) return kMaskStr;
  if (id == kUnk) return kUnkStr;
  if (id < reserved()) {
    special = "<s" + std::to_string(id - 3) + ">";
    return special;
  }
  const int w = id - reserved();
  if (w < 0 || w >= static_cast<int>(words_.size()))
    throw DataError("Vocab: id " + std::to_string(id) + " out of range");
  return words_[w];
}

std::vector<int> Vocab::tokenize(const std::string& text) const {
  std::vector<int> ids;
  for (auto& w : split_words(text)) ids.push_back(token_to_id(w));
  return ids;
}

std::string Vocab::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += id_to_token(ids[i]);
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("Vocab::save: cannot open " + path);
  for (const auto& w : words_) out << w << "\n";
}

Vocab Vocab::load(const std::string& path, int n_special) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("Vocab::load: cannot open " + path);
  Vocab v;
  v.n_special_ = n_special;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (!line.empty()) v.words_.push_back(line);
  }
  v.rebuild_index();
  return v;
}

Vocab Vocab::from_words(std::vector<std::string> words, int n_special) {
  Vocab v;
  v.n_special_ = n_special;
  v.words_ = std::move(words);
  v.rebuild_index();
  return v;
}

uint64_t Vocab::fingerprint() const {
  uint64_t h = fnv1a64(&n_special_, sizeof(n_special_));
  for (const auto& w : words_) {
    h = fnv1a64(w.data(), w.size(), h);
    h = fnv1a64("\n", 1, h);
  }
  return h;
}

SegmentedSample segment(const std::vector<int>& doc_tokens, int seq_len, int m_max,
                        int64_t doc_id) {
  if (seq_len < 2) throw ConfigError("segment: seq_len must be >= 2");
  if (m_max < 1) throw ConfigError("segment: m_max must be >= 1");
  SegmentedSample sample;
  sample.doc_id = doc_id;
  const int n = static_cast<int>(doc_tokens.size());
  for (int start = 0; start < n && static_cast<int>(sample.sequences.size()) < m_max;
       start += seq_len) {
    const int end = std::min(start + seq_len, n);
    sample.sequences.emplace_back(doc_tokens.begin() + start, doc_tokens.begin() + end);
  }
  return sample;
}

MaskedSequence mask_sequence(const std::vector<int>& seq, float rate, Rng& rng) {
  if (seq.empty()) throw DataError("mask_sequence: empty sequence");
  if (rate <= 0.0f || rate >= 1.0f) throw ConfigError("mask_sequence: rate must be in (0,1)");
  const int len = static_cast<int>(seq.size());
  int n_mask = static_cast<int>(std::lround(static_cast<double>(rate) * len));
  n_mask = std::min(std::max(n_mask, 1), len);

  // Partial Fisher-Yates: first n_mask entries of a shuffled index list.
  std::vector<int> idx(len);
  for (int i = 0; i < len; ++i) idx[i] = i;
  for (int i = 0; i < n_mask; ++i) {
    const int j = i + rng.uniform_int(len - i);
    std::swap(idx[i], idx[j]);
  }

  MaskedSequence out;
  out.input = seq;
  out.labels.assign(len, -1);
  out.n_masked = n_mask;
  for (int i = 0; i < n_mask; ++i) {
    out.labels[idx[i]] = seq[idx[i]];
    out.input[idx[i]] = Vocab::kMask;
  }
  return out;
}

int sample_position_offset(int seq_len, int max_pos, Rng& rng) {
  if (max_pos < seq_len)
    throw ConfigError("sample_position_offset: max_pos " + std::to_string(max_pos) +
                      " < seq_len " + std::to_string(seq_len));
  return rng.uniform_int(max_pos - seq_len + 2);  // inclusive upper bound max_pos - seq_len + 1
}

MaskedBatch make_masked_batch(const SegmentedSample& sample, const ModelConfig& cfg, Rng& rng) {
  MaskedBatch batch;
  batch.doc_id = sample.doc_id;
  for (const auto& seq : sample.sequences) {
    MaskedSequence ms = mask_sequence(seq, cfg.mask_rate, rng);
    ms.offset = sample_position_offset(cfg.seq_len, cfg.max_pos, rng);
    batch.sequences.push_back(std::move(ms));
  }
  return batch;
}

std::vector<std::string> read_corpus_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("corpus: cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    if (line.empty()) {
      log_warn("corpus: skipping empty document at line " + std::to_string(line_no));
      continue;
    }
    lines.push_back(line);
  }
  if (lines.empty()) throw DataError("corpus: no documents in " + path);
  return lines;
}

TokenizedCorpus tokenize_corpus(const std::vector<std::string>& lines, const Vocab& vocab) {
  TokenizedCorpus corpus;
  corpus.documents.reserve(lines.size());
  for (size_t i = 0; i < lines.size(); ++i) {
    auto ids = vocab.tokenize(lines[i]);
    if (ids.empty()) {
      log_warn("corpus: document " + std::to_string(i) + " tokenized to nothing, skipping");
      continue;
    }
    corpus.documents.push_back(std::move(ids));
  }
  return corpus;
}

void save_corpus_cache(const std::string& path, const TokenizedCorpus& corpus, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cache: cannot open " + path + " for writing");
  for (const auto& doc : corpus.documents) {
    const uint32_t len = static_cast<uint32_t>(doc.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    for (int id : doc) {
      const uint32_t v = static_cast<uint32_t>(id);
      out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
  }
  json sidecar;
  sidecar["version"] = 1;
  sidecar["vocab_fingerprint"] = hex64(vocab.fingerprint());
  sidecar["documents"] = corpus.documents.size();
  std::ofstream side(path + ".json", std::ios::binary);
  if (!side) throw DataError("cache: cannot open " + path + ".json for writing");
  side << sidecar.dump(2) << "\n";
}

TokenizedCorpus load_corpus_cache(const std::string& path, const Vocab& vocab) {
  std::ifstream side_in(path + ".json", std::ios::binary);
  if (!side_in) throw DataError("cache: missing sidecar " + path + ".json");
  json sidecar;
  try {
    side_in >> sidecar;
  } catch (const json::exception& e) {
    throw DataError(std::string("cache: bad sidecar: ") + e.what());
  }
  if (sidecar.value("vocab_fingerprint", "") != hex64(vocab.fingerprint()))
    throw DataError("cache: vocabulary fingerprint mismatch; rebuild the cache");

  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cache: cannot open " + path);
  TokenizedCorpus corpus;
  uint32_t len = 0;
  while (in.read(reinterpret_cast<char*>(&len), sizeof(len))) {
    std::vector<int> doc(len);
    for (uint32_t i = 0; i < len; ++i) {
      uint32_t v = 0;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof(v)))
        throw DataError("cache: truncated document data");
      doc[i] = static_cast<int>(v);
    }
    corpus.documents.push_back(std::move(doc));
  }
  const size_t expect = sidecar.value("documents", size_t{0});
  if (corpus.documents.size() != expect)
    throw DataError("cache: document count mismatch with sidecar");
  return corpus;
}

}  // namespace crossenc
