#pragma once

#include <string>
#include <vector>

#include "crossenc/crossnet.hpp"
#include "crossenc/finetune.hpp"

namespace crossenc {

// Synthetic neighbor-recovery corpus. Every document holds sequence pairs
// that share a topic word, a key word and a tag word; the last slot is a
// per-sequence filler:
//
//   carrier:  t07 k31 g12 f40
//   probe:    t07 k31 g12 f02
//
// Keys are drawn independently of topics and tags, so a masked key in one
// sequence is recoverable only by locating the paired sequence and copying
// its key. Sequence order inside a document is shuffled. All sequences are
// exactly kSeqLen words, so line-based corpora re-segment losslessly.
struct SynthSpec {
  static constexpr int kSeqLen = 4;
  static constexpr int kKeySlot = 1;

  int n_topics = 24;
  int n_keys = 50;  // K: answer-candidate set size
  int n_tags = 30;
  int n_fillers = 60;
  int pairs_per_doc = 2;  // M = 2 * pairs
  int group_size = 4;     // topic groups for the 3-class pair task
};

std::string topic_word(int t);
std::string key_word(int k);
std::string tag_word(int g);
std::string filler_word(int f);

// One line holding every inventory word; feed to Vocab::build so held-out
// documents never hit the UNK id.
std::vector<std::string> synth_vocab_lines(const SynthSpec& spec);

struct SynthDoc {
  std::vector<std::vector<std::string>> seqs;  // M x kSeqLen
  std::vector<int> partner;                    // paired sequence index
  std::vector<bool> is_probe;                  // masked side of each pair
  std::vector<int> key_slot;                   // in-sequence key position
  std::vector<std::string> key;                // key word per sequence
  std::vector<int> topic;                      // topic id per sequence

  std::string line() const;  // one corpus line
};

std::vector<SynthDoc> gen_pair_docs(const SynthSpec& spec, int count, Rng& rng);
void write_corpus(const std::string& path, const std::vector<SynthDoc>& docs);

// Ranking task: pool carriers with unique topic/key/tag, queries share all
// three with their gold carrier and differ only in the filler slot.
struct RankData {
  std::vector<std::string> pool;
  std::vector<RankingExample> train;
  std::vector<RankingExample> eval;
};
RankData gen_rank_data(const SynthSpec& spec, int pool_size, int train_n, int eval_n, Rng& rng);

// 3-class sentence-pair task: 0 = same topic, 1 = same topic group,
// 2 = different group. Keys, tags and fillers are uninformative.
struct ClsData {
  std::vector<ClsExample> train;
  std::vector<ClsExample> eval;
  int classes = 3;
};
ClsData gen_cls_data(const SynthSpec& spec, int train_n, int eval_n, Rng& rng);

void write_lines(const std::string& path, const std::vector<std::string>& lines);
void write_rank_tsv(const std::string& path, const std::vector<RankingExample>& rows);
void write_cls_tsv(const std::string& path, const std::vector<ClsExample>& rows);

// Batch for one document: the key slot of every probe sequence is masked
// (carriers untouched), offsets fixed at 0. Used both to pretrain on the
// pair corpus and to evaluate it.
MaskedBatch probe_masked_batch(const SynthDoc& doc, const Vocab& vocab, const ModelConfig& cfg);

// Held-out mechanism check: argmax of the mean-attention row (full row,
// self column included) against the true partner, and the masked-key NLL,
// over probe sequences.
struct MechanismEval {
  double attention_accuracy = 0.0;  // probes whose argmax hits the partner
  double key_loss = 0.0;            // mean NLL of true keys
  int probes = 0;
};
MechanismEval eval_mechanism(const Model& model, const Vocab& vocab,
                             const std::vector<SynthDoc>& docs);

}  // namespace crossenc
