#pragma once

#include "deid/linalg.hpp"
#include "deid/rng.hpp"

#include <string>
#include <vector>

namespace deid {

// ---------------------------------------------------------------- LSTM --

// One direction of an LSTM with recurrent size n and input size m.
// Gate order everywhere is i, f, o, c:
//   i = sigma(W_i x + U_i h + b_i)    f = sigma(W_f x + U_f h + b_f)
//   o = sigma(W_o x + U_o h + b_o)    c~ = tanh(W_c x + U_c h + b_c)
//   c' = f * c + i * c~               h' = o * tanh(c')
struct LstmParams {
  size_t n = 0, m = 0;
  Mat w_i, w_f, w_o, w_c;  // n x m
  Mat u_i, u_f, u_o, u_c;  // n x n
  Vec b_i, b_f, b_o, b_c;  // n, forget bias starts at +1

  static LstmParams init(size_t n, size_t m, Rng& rng);
  size_t param_count() const { return lstm_param_count(n, m); }

  static size_t lstm_param_count(size_t n, size_t m) {
    return 4 * (n * m + n * n + n);
  }
};

size_t lstm_param_count(size_t n, size_t m);

struct LstmState {
  Vec h, c;
  static LstmState zero(size_t n) { return {Vec(n, 0.0), Vec(n, 0.0)}; }
};

LstmState lstm_step(const LstmParams&, const Vec& x, const LstmState& prev);

// output[t] = [h_fwd[t], h_bwd[t]]; the backward direction consumes the
// reversed sequence, so h_bwd[t] is its hidden state at position t.
std::vector<Vec> run_bilstm(const LstmParams& fwd, const LstmParams& bwd,
                            const std::vector<Vec>& xs);

// Cached activations for backprop through time; indices follow feed order.
struct LstmTrace {
  std::vector<Vec> gate_i, gate_f, gate_o, cand;
  std::vector<Vec> cell, hidden, tanh_cell;
};

struct LstmGrads {
  Mat w_i, w_f, w_o, w_c, u_i, u_f, u_o, u_c;
  Vec b_i, b_f, b_o, b_c;
  static LstmGrads zero(const LstmParams&);
  void clear();
};

std::vector<Vec> lstm_run_cached(const LstmParams&, const std::vector<Vec>& xs,
                                 LstmTrace&);

// BPTT. d_hidden[t] = dLoss/dh_t in feed order; returns dLoss/dx_t and
// accumulates parameter gradients.
std::vector<Vec> lstm_backward(const LstmParams&, const std::vector<Vec>& xs,
                               const LstmTrace&, const std::vector<Vec>& d_hidden,
                               LstmGrads&);

// ----------------------------------------------------------------- FFN --

enum class Activation { Relu, Identity };

struct FfnLayer {
  Mat w;
  Vec b;
  Activation act = Activation::Identity;
};

// Stacked affine layers; the last layer's output is the logit vector.
struct FfnParams {
  std::vector<FfnLayer> layers;

  // dims = {in, h1, ..., out}; acts has dims.size()-1 entries
  static FfnParams init(const std::vector<size_t>& dims,
                        const std::vector<Activation>& acts, Rng& rng);
  size_t param_count() const;
};

Vec softmax(const Vec& logits);
Vec ffn_logits(const FfnParams&, const Vec& x);
Vec ffn_softmax(const FfnParams&, const Vec& x);

struct FfnTrace {
  std::vector<Vec> pre;   // per layer, pre-activation
  std::vector<Vec> post;  // per layer, post-activation (last == logits)
};

struct FfnGrads {
  std::vector<Mat> w;
  std::vector<Vec> b;
  static FfnGrads zero(const FfnParams&);
  void clear();
};

Vec ffn_forward_cached(const FfnParams&, const Vec& x, FfnTrace&);
// d_logits -> d_x; accumulates parameter gradients
Vec ffn_backward(const FfnParams&, const Vec& x, const FfnTrace&,
                 const Vec& d_logits, FfnGrads&);

// ----------------------------------------------------------------- CRF --

// Linear-chain CRF over K labels plus virtual START/STOP states.
// transitions(i, j) is the score of label i followed by label j; row K
// holds START->j scores and column K+1 holds j->STOP scores. The START
// column and the STOP row are never read (minus infinity by convention).
struct CrfParams {
  size_t num_labels = 0;
  Mat transitions;  // (K+2) x (K+2)

  static CrfParams init(size_t num_labels);  // zero transitions
  size_t start_index() const { return num_labels; }
  size_t stop_index() const { return num_labels + 1; }
};

// emissions is L x K; all functions require L >= 1.
double crf_log_partition(const CrfParams&, const Mat& emissions);
// Best path; ties resolved toward the lowest label index at the latest
// position where tied paths differ.
std::vector<int> crf_viterbi(const CrfParams&, const Mat& emissions);
// Posterior P(y_t = k); rows sum to 1.
Mat crf_marginals(const CrfParams&, const Mat& emissions);

double crf_gold_score(const CrfParams&, const Mat& emissions,
                      const std::vector<int>& gold);

struct CrfNllGrad {
  double nll = 0.0;
  Mat d_emissions;    // L x K
  Mat d_transitions;  // (K+2) x (K+2); unused entries stay zero
};

// Negative log-likelihood of the gold path and its exact gradients
// (expected minus observed feature counts).
CrfNllGrad crf_nll_grad(const CrfParams&, const Mat& emissions,
                        const std::vector<int>& gold);

// ---------------------------------------------------------- tagger net --

struct TaggerNetConfig {
  size_t char_vocab = 0;  // char embedding rows, row 0 = unknown
  size_t char_dim = 25;   // char embedding width == char LSTM input
  size_t char_hidden = 25;
  bool char_bidirectional = true;
  size_t token_dim = 100;  // frozen word-vector width
  size_t token_hidden = 100;
  size_t num_labels = 0;
  std::vector<size_t> head_hidden;  // ReLU widths before the logit layer
  bool use_crf = false;

  size_t char_out() const { return char_hidden * (char_bidirectional ? 2 : 1); }
  size_t lstm_input() const { return token_dim + char_out(); }
  size_t lstm_output() const { return 2 * token_hidden; }
};

// Three-layer tagger: frozen word vector plus char-LSTM summary feed a
// token BiLSTM whose outputs go through a feed-forward head to per-label
// scores; an optional CRF sits on top of the scores. The char embedding
// is trainable; the word vectors arrive pre-looked-up and frozen.
struct TaggerNet {
  TaggerNetConfig cfg;
  Mat char_embedding;  // char_vocab x char_dim
  LstmParams char_fwd, char_bwd;  // char_bwd unused when unidirectional
  LstmParams tok_fwd, tok_bwd;
  FfnParams head;
  CrfParams crf;  // meaningful iff cfg.use_crf

  static TaggerNet init(const TaggerNetConfig&, Rng&);
  size_t param_count() const;  // trainable scalars
};

struct EncodedToken {
  Vec word_vec;                   // frozen input
  std::vector<size_t> char_rows;  // rows of the char embedding
};

struct EncodedSentence {
  std::vector<EncodedToken> tokens;
  std::vector<int> gold;
};

enum class LossKind { SoftmaxCrossEntropy, CrfNegLogLik };

// L x K pre-softmax scores of the feed-forward head.
Mat tagger_emissions(const TaggerNet&, const EncodedSentence&);
// Row-softmax of the emissions. Always bypasses the CRF: probability
// audits read the softmax layer no matter how the net is decoded.
Mat tagger_forward_p(const TaggerNet&, const EncodedSentence&);

struct TaggerGrads {
  Mat char_embedding;
  LstmGrads char_fwd, char_bwd, tok_fwd, tok_bwd;
  FfnGrads head;
  Mat crf_transitions;
  static TaggerGrads zero(const TaggerNet&);
  void clear();
};

// Sentence loss (sum over tokens for cross-entropy, sequence NLL for the
// CRF) plus parameter gradients. dropout_masks, when non-null, holds one
// mask per token applied to the BiLSTM input vector; entries are 0 or
// 1/(1-rate) (inverted dropout).
double tagger_loss_grad(const TaggerNet&, const EncodedSentence&, LossKind,
                        const std::vector<Vec>* dropout_masks, TaggerGrads&);
double tagger_loss(const TaggerNet&, const EncodedSentence&, LossKind,
                   const std::vector<Vec>* dropout_masks = nullptr);

struct TrainConfig {
  double learning_rate = 0.01;
  double dropout_rate = 0.5;
  size_t max_epochs = 0;
  double gradient_clip = 5.0;
  uint64_t seed = 1;

  void validate() const;
};

// One pass of per-sentence SGD (batch size 1) in seeded-shuffled order,
// with inverted dropout and global gradient-norm clipping. Returns the
// mean sentence loss.
double sgd_epoch(TaggerNet&, const std::vector<EncodedSentence>&,
                 const TrainConfig&, LossKind, Rng&);

// Max over trainable parameters of
// |g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|, 1e-8),
// with g_numeric from central differences. Dropout off. The net is
// perturbed in place and restored.
double grad_check(TaggerNet&, const EncodedSentence&, LossKind, double epsilon);

// Named flat views over the trainable tensors, in one fixed order shared
// by the optimizer, the serializer and the gradient checker. The frozen
// word vectors are inputs, not parameters, and never appear here.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  size_t size = 0;
};

std::vector<TensorRef> trainable_tensors(TaggerNet&);
std::vector<TensorRef> grad_tensors(const TaggerNet&, TaggerGrads&);

}  // namespace deid
