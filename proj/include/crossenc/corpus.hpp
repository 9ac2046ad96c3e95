#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "crossenc/config.hpp"
#include "crossenc/rng.hpp"

namespace crossenc {

// Word-level vocabulary. Ids 0..N+2 are reserved (PAD, MASK, UNK, then the N
// special sentence tokens); text tokenization never yields PAD, MASK or a
// special id. Out-of-vocabulary words map to UNK.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;

  Vocab() = default;

  // One document per line; lowercased, split on whitespace and punctuation.
  // Words below min_count, or past the max_size cap (most frequent first,
  // lexicographic tie-break), are dropped and tokenize to UNK.
  static Vocab build(const std::vector<std::string>& documents, int min_count, int max_size,
                     int n_special);

  int n_special() const { return n_special_; }
  int reserved() const { return 3 + n_special_; }
  int special_id(int n) const { return 3 + n; }
  int size() const { return reserved() + static_cast<int>(words_.size()); }

  int token_to_id(const std::string& token) const;  // UNK when absent
  const std::string& id_to_token(int id) const;

  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

  static std::vector<std::string> split_words(const std::string& text);

  // Vocab file: one word per line, line number = id - reserved.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path, int n_special);
  static Vocab from_words(std::vector<std::string> words, int n_special);

  const std::vector<std::string>& words() const { return words_; }
  uint64_t fingerprint() const;

 private:
  int n_special_ = 1;
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;  // word -> id

  void rebuild_index();
};

struct SegmentedSample {
  int64_t doc_id = 0;
  std::vector<std::vector<int>> sequences;  // contiguous, document order
};

// Consecutive non-overlapping chunks of at most seq_len tokens, document
// order preserved, at most m_max chunks (the tail beyond the cap is dropped).
// The last kept chunk may be shorter.
SegmentedSample segment(const std::vector<int>& doc_tokens, int seq_len, int m_max,
                        int64_t doc_id = 0);

struct MaskedSequence {
  std::vector<int> input;   // MASK substituted at masked positions
  std::vector<int> labels;  // original id at masked positions, -1 elsewhere
  int offset = 0;           // first word position id
  int n_masked = 0;
  int len() const { return static_cast<int>(input.size()); }
};

struct MaskedBatch {
  int64_t doc_id = 0;
  std::vector<MaskedSequence> sequences;
  int total_masked() const {
    int n = 0;
    for (const auto& s : sequences) n += s.n_masked;
    return n;
  }
};

// Masks round(rate * len) distinct positions (at least one), uniform without
// replacement. Originals are kept as labels.
MaskedSequence mask_sequence(const std::vector<int>& seq, float rate, Rng& rng);

// Uniform word-position offset in [0, max_pos - seq_len + 1].
int sample_position_offset(int seq_len, int max_pos, Rng& rng);

MaskedBatch make_masked_batch(const SegmentedSample& sample, const ModelConfig& cfg, Rng& rng);

// Corpus file: UTF-8 plain text, one document per line. Empty documents are
// skipped with a warning.
std::vector<std::string> read_corpus_lines(const std::string& path);

struct TokenizedCorpus {
  std::vector<std::vector<int>> documents;
};

TokenizedCorpus tokenize_corpus(const std::vector<std::string>& lines, const Vocab& vocab);

// Dataset cache: little-endian 32-bit ids with a JSON sidecar describing the
// vocabulary fingerprint and document count.
void save_corpus_cache(const std::string& path, const TokenizedCorpus& corpus, const Vocab& vocab);
TokenizedCorpus load_corpus_cache(const std::string& path, const Vocab& vocab);

}  // namespace crossenc
