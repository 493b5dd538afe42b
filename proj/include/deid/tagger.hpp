#pragma once

#include "deid/corpus.hpp"
#include "deid/embeddings.hpp"
#include "deid/neural.hpp"
#include "deid/parallel.hpp"
#include "deid/perturb.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace deid {

struct TaggerModelConfig {
  size_t char_dim = 25;
  size_t char_hidden = 25;
  bool char_bidirectional = true;
  size_t token_hidden = 100;
  std::vector<size_t> head_hidden;  // empty = single linear layer
  bool use_crf = false;
};

// A trained tagger: the net plus everything needed to run it on raw
// sentences (frozen word vectors, char vocabulary, tag set).
struct TaggerModel {
  TagSet tagset;
  EmbeddingTable embedding;          // frozen
  std::vector<uint32_t> char_vocab;  // sorted code points; row 0 = unknown
  TaggerNet net;
  uint64_t seed = 0;
  size_t epochs_trained = 0;
  size_t best_epoch = 0;  // 1-based epoch whose weights were kept
};

// 0 for unknown, otherwise 1 + position in the sorted vocab.
size_t char_row(const std::vector<uint32_t>& vocab, uint32_t cp);
std::vector<uint32_t> build_char_vocab(const Corpus&, Split);

EncodedSentence encode_sentence(const AnnotatedSentence&, const EmbeddingTable&,
                                const std::vector<uint32_t>& char_vocab);
std::vector<EncodedSentence> encode_split(const Corpus&, Split,
                                          const EmbeddingTable&,
                                          const std::vector<uint32_t>& char_vocab);

struct EpochStats {
  size_t epoch = 0;  // 1-based
  double mean_loss = 0;
  double valid_f1 = 0;
};

struct TrainOutcome {
  TaggerModel model;
  std::vector<EpochStats> history;
};

// Full training protocol: per-sentence SGD epochs over the train split,
// token F1 on the valid split after each epoch, weights of the best
// epoch retained (first best wins ties). The embedding table is input
// data and is never modified.
TrainOutcome train_tagger(const Corpus&, const EmbeddingTable&,
                          const TaggerModelConfig&, const TrainConfig&);

// Per-token softmax distributions. Always the softmax layer, also on CRF
// models: probability audits bypass the CRF by construction.
std::vector<Vec> predict_p(const TaggerModel&, const AnnotatedSentence&);

// Viterbi path for CRF models, per-token argmax otherwise.
std::vector<int> decode_tags(const TaggerModel&, const AnnotatedSentence&);

struct ClassMetrics {
  size_t tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
  bool precision_defined = true;  // false when TP+FP == 0
  bool recall_defined = true;     // false when TP+FN == 0
};

struct Metrics {
  std::map<std::string, ClassMetrics> per_class;  // non-O labels
  ClassMetrics overall;                           // micro-averaged
};

Metrics evaluate(const TaggerModel&, const Corpus&, Split,
                 Exec exec = Exec::Parallel);

enum class NameClass { Surname, Given };

// One audited name token: the softmax vector P at its position plus the
// scalar of interest, P[gold name tag].
struct ProbRecord {
  std::string report_id;
  size_t sentence_index = 0;
  size_t token_index = 0;
  Vec p;
  int gold_tag = -1;
  VariantKind variant = VariantKind::Orig;
  std::string name;  // canonical lowercase of the (possibly substituted) token
  double score = 0;
};

// P records for every listed position, ordered by report then position.
// Positions must carry gold tags of the requested name class.
std::vector<ProbRecord> extract_name_probs(
    const TaggerModel&, const Corpus&,
    const std::vector<std::vector<TokenPos>>& positions, NameClass,
    VariantKind, Exec exec = Exec::Parallel);

void write_prob_records_csv(std::ostream&, const std::vector<ProbRecord>&,
                            const TagSet&);
// the "score" column of a prob-record CSV
std::vector<double> read_prob_scores_csv(std::istream&);
std::vector<double> record_scores(const std::vector<ProbRecord>&);

// Versioned JSON container with every tensor row-major; loading
// reproduces predictions bit-exactly.
void save_model(const TaggerModel&, const std::string& path);
TaggerModel load_model(const std::string& path);

}  // namespace deid
