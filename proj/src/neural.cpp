#include "deid/neural.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace deid {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double logsumexp(const Vec& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

void glorot_fill(Mat& m, size_t fan_in, size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& x : m.raw()) x = rng.uniform(-bound, bound);
}

}  // namespace

size_t lstm_param_count(size_t n, size_t m) {
  return LstmParams::lstm_param_count(n, m);
}

LstmParams LstmParams::init(size_t n, size_t m, Rng& rng) {
  // m == 0 is legal: a cell with no input, driven by recurrence alone
  if (n == 0) throw std::invalid_argument("lstm size must be positive");
  LstmParams p;
  p.n = n;
  p.m = m;
  for (Mat* w : {&p.w_i, &p.w_f, &p.w_o, &p.w_c}) {
    *w = Mat(n, m);
    glorot_fill(*w, m, n, rng);
  }
  for (Mat* u : {&p.u_i, &p.u_f, &p.u_o, &p.u_c}) {
    *u = Mat(n, n);
    glorot_fill(*u, n, n, rng);
  }
  p.b_i.assign(n, 0.0);
  p.b_f.assign(n, 1.0);  // positive forget bias keeps early memory open
  p.b_o.assign(n, 0.0);
  p.b_c.assign(n, 0.0);
  return p;
}

namespace {

// shared by lstm_step and lstm_run_cached
void lstm_gates(const LstmParams& p, const Vec& x, const Vec& h_prev, Vec& gi,
                Vec& gf, Vec& go, Vec& gc) {
  gi = p.b_i;
  gf = p.b_f;
  go = p.b_o;
  gc = p.b_c;
  matvec_add(p.w_i, x, gi);
  matvec_add(p.w_f, x, gf);
  matvec_add(p.w_o, x, go);
  matvec_add(p.w_c, x, gc);
  matvec_add(p.u_i, h_prev, gi);
  matvec_add(p.u_f, h_prev, gf);
  matvec_add(p.u_o, h_prev, go);
  matvec_add(p.u_c, h_prev, gc);
  for (size_t k = 0; k < p.n; ++k) {
    gi[k] = sigmoid(gi[k]);
    gf[k] = sigmoid(gf[k]);
    go[k] = sigmoid(go[k]);
    gc[k] = std::tanh(gc[k]);
  }
}

}  // namespace

LstmState lstm_step(const LstmParams& p, const Vec& x, const LstmState& prev) {
  if (x.size() != p.m || prev.h.size() != p.n || prev.c.size() != p.n)
    throw std::invalid_argument("lstm_step: dimension mismatch");
  Vec gi, gf, go, gc;
  lstm_gates(p, x, prev.h, gi, gf, go, gc);
  LstmState next = LstmState::zero(p.n);
  for (size_t k = 0; k < p.n; ++k) {
    next.c[k] = gf[k] * prev.c[k] + gi[k] * gc[k];
    next.h[k] = go[k] * std::tanh(next.c[k]);
  }
  return next;
}

std::vector<Vec> lstm_run_cached(const LstmParams& p, const std::vector<Vec>& xs,
                                 LstmTrace& tr) {
  const size_t L = xs.size();
  tr.gate_i.resize(L);
  tr.gate_f.resize(L);
  tr.gate_o.resize(L);
  tr.cand.resize(L);
  tr.cell.resize(L);
  tr.hidden.resize(L);
  tr.tanh_cell.resize(L);
  Vec h(p.n, 0.0), c(p.n, 0.0);
  for (size_t t = 0; t < L; ++t) {
    lstm_gates(p, xs[t], h, tr.gate_i[t], tr.gate_f[t], tr.gate_o[t], tr.cand[t]);
    Vec& ct = tr.cell[t];
    Vec& ht = tr.hidden[t];
    Vec& tc = tr.tanh_cell[t];
    ct.resize(p.n);
    ht.resize(p.n);
    tc.resize(p.n);
    for (size_t k = 0; k < p.n; ++k) {
      ct[k] = tr.gate_f[t][k] * c[k] + tr.gate_i[t][k] * tr.cand[t][k];
      tc[k] = std::tanh(ct[k]);
      ht[k] = tr.gate_o[t][k] * tc[k];
    }
    h = ht;
    c = ct;
  }
  return tr.hidden;
}

std::vector<Vec> run_bilstm(const LstmParams& fwd, const LstmParams& bwd,
                            const std::vector<Vec>& xs) {
  LstmTrace tf, tb;
  std::vector<Vec> hf = lstm_run_cached(fwd, xs, tf);
  std::vector<Vec> rev(xs.rbegin(), xs.rend());
  std::vector<Vec> hb = lstm_run_cached(bwd, rev, tb);
  const size_t L = xs.size();
  std::vector<Vec> out(L);
  for (size_t t = 0; t < L; ++t) {
    out[t].reserve(fwd.n + bwd.n);
    out[t] = hf[t];
    const Vec& back = hb[L - 1 - t];
    out[t].insert(out[t].end(), back.begin(), back.end());
  }
  return out;
}

LstmGrads LstmGrads::zero(const LstmParams& p) {
  LstmGrads g;
  for (Mat* w : {&g.w_i, &g.w_f, &g.w_o, &g.w_c}) *w = Mat(p.n, p.m);
  for (Mat* u : {&g.u_i, &g.u_f, &g.u_o, &g.u_c}) *u = Mat(p.n, p.n);
  for (Vec* b : {&g.b_i, &g.b_f, &g.b_o, &g.b_c}) b->assign(p.n, 0.0);
  return g;
}

void LstmGrads::clear() {
  for (Mat* w : {&w_i, &w_f, &w_o, &w_c, &u_i, &u_f, &u_o, &u_c}) w->fill(0.0);
  for (Vec* b : {&b_i, &b_f, &b_o, &b_c}) b->assign(b->size(), 0.0);
}

std::vector<Vec> lstm_backward(const LstmParams& p, const std::vector<Vec>& xs,
                               const LstmTrace& tr, const std::vector<Vec>& d_hidden,
                               LstmGrads& g) {
  const size_t L = xs.size();
  if (d_hidden.size() != L)
    throw std::invalid_argument("lstm_backward: d_hidden length mismatch");
  std::vector<Vec> dx(L, Vec(p.m, 0.0));
  Vec dh(p.n, 0.0), dc(p.n, 0.0);
  Vec di(p.n), df(p.n), dof(p.n), dcand(p.n);
  for (size_t ti = L; ti-- > 0;) {
    for (size_t k = 0; k < p.n; ++k) dh[k] += d_hidden[ti][k];
    const Vec& i = tr.gate_i[ti];
    const Vec& f = tr.gate_f[ti];
    const Vec& o = tr.gate_o[ti];
    const Vec& cd = tr.cand[ti];
    const Vec& tc = tr.tanh_cell[ti];
    const Vec* c_prev = ti > 0 ? &tr.cell[ti - 1] : nullptr;
    const Vec* h_prev = ti > 0 ? &tr.hidden[ti - 1] : nullptr;
    for (size_t k = 0; k < p.n; ++k) {
      const double d_o = dh[k] * tc[k];
      const double d_c = dh[k] * o[k] * (1.0 - tc[k] * tc[k]) + dc[k];
      const double cp = c_prev ? (*c_prev)[k] : 0.0;
      di[k] = d_c * cd[k] * i[k] * (1.0 - i[k]);
      df[k] = d_c * cp * f[k] * (1.0 - f[k]);
      dof[k] = d_o * o[k] * (1.0 - o[k]);
      dcand[k] = d_c * i[k] * (1.0 - cd[k] * cd[k]);
      dc[k] = d_c * f[k];
    }
    outer_add(di, xs[ti], g.w_i);
    outer_add(df, xs[ti], g.w_f);
    outer_add(dof, xs[ti], g.w_o);
    outer_add(dcand, xs[ti], g.w_c);
    add_scaled(g.b_i, di, 1.0);
    add_scaled(g.b_f, df, 1.0);
    add_scaled(g.b_o, dof, 1.0);
    add_scaled(g.b_c, dcand, 1.0);
    matvec_t_add(p.w_i, di, dx[ti]);
    matvec_t_add(p.w_f, df, dx[ti]);
    matvec_t_add(p.w_o, dof, dx[ti]);
    matvec_t_add(p.w_c, dcand, dx[ti]);
    dh.assign(p.n, 0.0);
    if (h_prev) {
      outer_add(di, *h_prev, g.u_i);
      outer_add(df, *h_prev, g.u_f);
      outer_add(dof, *h_prev, g.u_o);
      outer_add(dcand, *h_prev, g.u_c);
      matvec_t_add(p.u_i, di, dh);
      matvec_t_add(p.u_f, df, dh);
      matvec_t_add(p.u_o, dof, dh);
      matvec_t_add(p.u_c, dcand, dh);
    }
  }
  return dx;
}

// ----------------------------------------------------------------- FFN --

FfnParams FfnParams::init(const std::vector<size_t>& dims,
                          const std::vector<Activation>& acts, Rng& rng) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1)
    throw std::invalid_argument("ffn init: dims/acts mismatch");
  FfnParams p;
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    FfnLayer layer;
    layer.w = Mat(dims[l + 1], dims[l]);
    glorot_fill(layer.w, dims[l], dims[l + 1], rng);
    layer.b.assign(dims[l + 1], 0.0);
    layer.act = acts[l];
    p.layers.push_back(std::move(layer));
  }
  return p;
}

size_t FfnParams::param_count() const {
  size_t n = 0;
  for (const FfnLayer& l : layers) n += l.w.size() + l.b.size();
  return n;
}

Vec softmax(const Vec& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of empty vector");
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  Vec out(logits.size());
  double s = 0.0;
  for (size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - mx);
    s += out[k];
  }
  for (double& x : out) x /= s;
  return out;
}

Vec ffn_forward_cached(const FfnParams& p, const Vec& x, FfnTrace& tr) {
  tr.pre.resize(p.layers.size());
  tr.post.resize(p.layers.size());
  const Vec* cur = &x;
  for (size_t l = 0; l < p.layers.size(); ++l) {
    const FfnLayer& layer = p.layers[l];
    tr.pre[l] = layer.b;
    matvec_add(layer.w, *cur, tr.pre[l]);
    tr.post[l] = tr.pre[l];
    if (layer.act == Activation::Relu)
      for (double& v : tr.post[l]) v = std::max(0.0, v);
    cur = &tr.post[l];
  }
  return *cur;
}

Vec ffn_logits(const FfnParams& p, const Vec& x) {
  FfnTrace tr;
  return ffn_forward_cached(p, x, tr);
}

Vec ffn_softmax(const FfnParams& p, const Vec& x) {
  return softmax(ffn_logits(p, x));
}

FfnGrads FfnGrads::zero(const FfnParams& p) {
  FfnGrads g;
  for (const FfnLayer& l : p.layers) {
    g.w.emplace_back(l.w.rows(), l.w.cols());
    g.b.emplace_back(l.b.size(), 0.0);
  }
  return g;
}

void FfnGrads::clear() {
  for (Mat& m : w) m.fill(0.0);
  for (Vec& v : b) v.assign(v.size(), 0.0);
}

Vec ffn_backward(const FfnParams& p, const Vec& x, const FfnTrace& tr,
                 const Vec& d_logits, FfnGrads& g) {
  Vec d = d_logits;
  for (size_t l = p.layers.size(); l-- > 0;) {
    const FfnLayer& layer = p.layers[l];
    if (layer.act == Activation::Relu)
      for (size_t k = 0; k < d.size(); ++k)
        if (tr.pre[l][k] <= 0.0) d[k] = 0.0;
    const Vec& input = l == 0 ? x : tr.post[l - 1];
    outer_add(d, input, g.w[l]);
    add_scaled(g.b[l], d, 1.0);
    Vec dx(layer.w.cols(), 0.0);
    matvec_t_add(layer.w, d, dx);
    d = std::move(dx);
  }
  return d;
}

// ----------------------------------------------------------------- CRF --

CrfParams CrfParams::init(size_t num_labels) {
  if (num_labels == 0) throw std::invalid_argument("crf needs labels");
  CrfParams p;
  p.num_labels = num_labels;
  p.transitions = Mat(num_labels + 2, num_labels + 2);
  return p;
}

namespace {

void crf_check(const CrfParams& crf, const Mat& em) {
  if (em.rows() == 0) throw std::invalid_argument("empty emission sequence");
  if (em.cols() != crf.num_labels)
    throw std::invalid_argument("emission width does not match label count");
}

// alphas[t][j] includes em(t, j)
std::vector<Vec> crf_alphas(const CrfParams& crf, const Mat& em) {
  const size_t L = em.rows(), K = crf.num_labels, S = crf.start_index();
  std::vector<Vec> alpha(L, Vec(K));
  for (size_t j = 0; j < K; ++j)
    alpha[0][j] = crf.transitions(S, j) + em(0, j);
  Vec tmp(K);
  for (size_t t = 1; t < L; ++t) {
    for (size_t j = 0; j < K; ++j) {
      for (size_t i = 0; i < K; ++i)
        tmp[i] = alpha[t - 1][i] + crf.transitions(i, j);
      alpha[t][j] = logsumexp(tmp) + em(t, j);
    }
  }
  return alpha;
}

// betas[t][i] excludes em(t, i); betas[L-1][i] = trans(i, STOP)
std::vector<Vec> crf_betas(const CrfParams& crf, const Mat& em) {
  const size_t L = em.rows(), K = crf.num_labels, T = crf.stop_index();
  std::vector<Vec> beta(L, Vec(K));
  for (size_t i = 0; i < K; ++i) beta[L - 1][i] = crf.transitions(i, T);
  Vec tmp(K);
  for (size_t t = L - 1; t-- > 0;) {
    for (size_t i = 0; i < K; ++i) {
      for (size_t j = 0; j < K; ++j)
        tmp[j] = crf.transitions(i, j) + em(t + 1, j) + beta[t + 1][j];
      beta[t][i] = logsumexp(tmp);
    }
  }
  return beta;
}

}  // namespace

double crf_log_partition(const CrfParams& crf, const Mat& em) {
  crf_check(crf, em);
  const size_t L = em.rows(), K = crf.num_labels, T = crf.stop_index();
  auto alpha = crf_alphas(crf, em);
  Vec fin(K);
  for (size_t j = 0; j < K; ++j) fin[j] = alpha[L - 1][j] + crf.transitions(j, T);
  return logsumexp(fin);
}

std::vector<int> crf_viterbi(const CrfParams& crf, const Mat& em) {
  crf_check(crf, em);
  const size_t L = em.rows(), K = crf.num_labels;
  const size_t S = crf.start_index(), T = crf.stop_index();
  std::vector<Vec> score(L, Vec(K));
  std::vector<std::vector<int>> back(L, std::vector<int>(K, -1));
  for (size_t j = 0; j < K; ++j)
    score[0][j] = crf.transitions(S, j) + em(0, j);
  for (size_t t = 1; t < L; ++t) {
    for (size_t j = 0; j < K; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      // strictly-greater keeps the lowest predecessor index on ties,
      // which realizes the lowest-label-at-latest-position rule
      for (size_t i = 0; i < K; ++i) {
        const double v = score[t - 1][i] + crf.transitions(i, j);
        if (v > best) {
          best = v;
          arg = static_cast<int>(i);
        }
      }
      score[t][j] = best + em(t, j);
      back[t][j] = arg;
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  int last = 0;
  for (size_t j = 0; j < K; ++j) {
    const double v = score[L - 1][j] + crf.transitions(j, T);
    if (v > best) {
      best = v;
      last = static_cast<int>(j);
    }
  }
  std::vector<int> path(L);
  path[L - 1] = last;
  for (size_t t = L - 1; t-- > 0;) path[t] = back[t + 1][path[t + 1]];
  return path;
}

Mat crf_marginals(const CrfParams& crf, const Mat& em) {
  crf_check(crf, em);
  const size_t L = em.rows(), K = crf.num_labels, T = crf.stop_index();
  auto alpha = crf_alphas(crf, em);
  auto beta = crf_betas(crf, em);
  Vec fin(K);
  for (size_t j = 0; j < K; ++j) fin[j] = alpha[L - 1][j] + crf.transitions(j, T);
  const double log_z = logsumexp(fin);
  Mat marg(L, K);
  for (size_t t = 0; t < L; ++t)
    for (size_t j = 0; j < K; ++j)
      marg(t, j) = std::exp(alpha[t][j] + beta[t][j] - log_z);
  return marg;
}

double crf_gold_score(const CrfParams& crf, const Mat& em,
                      const std::vector<int>& gold) {
  crf_check(crf, em);
  const size_t L = em.rows(), K = crf.num_labels;
  if (gold.size() != L)
    throw std::invalid_argument("gold path length mismatch");
  for (int y : gold)
    if (y < 0 || static_cast<size_t>(y) >= K)
      throw std::invalid_argument("gold label out of range");
  double s = crf.transitions(crf.start_index(), gold[0]);
  for (size_t t = 0; t < L; ++t) {
    s += em(t, gold[t]);
    if (t > 0) s += crf.transitions(gold[t - 1], gold[t]);
  }
  s += crf.transitions(gold[L - 1], crf.stop_index());
  return s;
}

CrfNllGrad crf_nll_grad(const CrfParams& crf, const Mat& em,
                        const std::vector<int>& gold) {
  crf_check(crf, em);
  const size_t L = em.rows(), K = crf.num_labels;
  const size_t S = crf.start_index(), T = crf.stop_index();
  if (gold.size() != L)
    throw std::invalid_argument("gold path length mismatch");
  auto alpha = crf_alphas(crf, em);
  auto beta = crf_betas(crf, em);
  Vec fin(K);
  for (size_t j = 0; j < K; ++j) fin[j] = alpha[L - 1][j] + crf.transitions(j, T);
  const double log_z = logsumexp(fin);

  CrfNllGrad out;
  out.nll = log_z - crf_gold_score(crf, em, gold);
  out.d_emissions = Mat(L, K);
  out.d_transitions = Mat(K + 2, K + 2);

  // expected minus observed unary counts
  for (size_t t = 0; t < L; ++t)
    for (size_t j = 0; j < K; ++j)
      out.d_emissions(t, j) = std::exp(alpha[t][j] + beta[t][j] - log_z) -
                              (gold[t] == static_cast<int>(j) ? 1.0 : 0.0);

  // START -> j and j -> STOP
  for (size_t j = 0; j < K; ++j) {
    const double m0 = std::exp(alpha[0][j] + beta[0][j] - log_z);
    out.d_transitions(S, j) = m0 - (gold[0] == static_cast<int>(j) ? 1.0 : 0.0);
    const double mL = std::exp(alpha[L - 1][j] + beta[L - 1][j] - log_z);
    out.d_transitions(j, T) =
        mL - (gold[L - 1] == static_cast<int>(j) ? 1.0 : 0.0);
  }
  // pairwise expectations
  for (size_t t = 0; t + 1 < L; ++t) {
    for (size_t i = 0; i < K; ++i) {
      for (size_t j = 0; j < K; ++j) {
        const double lp = alpha[t][i] + crf.transitions(i, j) + em(t + 1, j) +
                          beta[t + 1][j] - log_z;
        out.d_transitions(i, j) += std::exp(lp);
      }
    }
    out.d_transitions(gold[t], gold[t + 1]) -= 1.0;
  }
  return out;
}

// ---------------------------------------------------------- tagger net --

TaggerNet TaggerNet::init(const TaggerNetConfig& cfg, Rng& rng) {
  if (cfg.char_vocab == 0 || cfg.char_dim == 0 || cfg.char_hidden == 0 ||
      cfg.token_dim == 0 || cfg.token_hidden == 0 || cfg.num_labels == 0)
    throw std::invalid_argument("tagger net config has a zero dimension");
  TaggerNet net;
  net.cfg = cfg;
  net.char_embedding = Mat(cfg.char_vocab, cfg.char_dim);
  glorot_fill(net.char_embedding, cfg.char_vocab, cfg.char_dim, rng);
  net.char_fwd = LstmParams::init(cfg.char_hidden, cfg.char_dim, rng);
  if (cfg.char_bidirectional)
    net.char_bwd = LstmParams::init(cfg.char_hidden, cfg.char_dim, rng);
  net.tok_fwd = LstmParams::init(cfg.token_hidden, cfg.lstm_input(), rng);
  net.tok_bwd = LstmParams::init(cfg.token_hidden, cfg.lstm_input(), rng);
  std::vector<size_t> dims = {cfg.lstm_output()};
  std::vector<Activation> acts;
  for (size_t h : cfg.head_hidden) {
    dims.push_back(h);
    acts.push_back(Activation::Relu);
  }
  dims.push_back(cfg.num_labels);
  acts.push_back(Activation::Identity);
  net.head = FfnParams::init(dims, acts, rng);
  if (cfg.use_crf) net.crf = CrfParams::init(cfg.num_labels);
  return net;
}

size_t TaggerNet::param_count() const {
  size_t n = char_embedding.size() + char_fwd.param_count() +
             tok_fwd.param_count() + tok_bwd.param_count() + head.param_count();
  if (cfg.char_bidirectional) n += char_bwd.param_count();
  if (cfg.use_crf) n += crf.transitions.size();
  return n;
}

namespace {

struct SentenceTrace {
  std::vector<std::vector<Vec>> char_f_xs, char_b_xs;
  std::vector<LstmTrace> char_f_tr, char_b_tr;
  std::vector<Vec> xs_fwd, xs_bwd;  // token BiLSTM inputs, masked
  LstmTrace tok_f_tr, tok_b_tr;
  std::vector<Vec> lstm_out;
  std::vector<FfnTrace> head_tr;
};

Mat forward_sentence(const TaggerNet& net, const EncodedSentence& sent,
                     const std::vector<Vec>* masks, SentenceTrace& tr) {
  const TaggerNetConfig& cfg = net.cfg;
  const size_t L = sent.tokens.size();
  if (L == 0) throw std::invalid_argument("empty sentence");
  if (masks && masks->size() != L)
    throw std::invalid_argument("dropout mask count mismatch");
  tr.char_f_xs.resize(L);
  tr.char_f_tr.assign(L, {});
  if (cfg.char_bidirectional) {
    tr.char_b_xs.resize(L);
    tr.char_b_tr.assign(L, {});
  }
  tr.xs_fwd.assign(L, Vec());
  for (size_t t = 0; t < L; ++t) {
    const EncodedToken& tok = sent.tokens[t];
    if (tok.word_vec.size() != cfg.token_dim)
      throw std::invalid_argument("word vector width mismatch");
    std::vector<Vec>& cx = tr.char_f_xs[t];
    cx.clear();
    for (size_t row : tok.char_rows) {
      if (row >= cfg.char_vocab)
        throw std::invalid_argument("char row out of range");
      cx.emplace_back(net.char_embedding.row(row),
                      net.char_embedding.row(row) + cfg.char_dim);
    }
    Vec x;
    x.reserve(cfg.lstm_input());
    x = tok.word_vec;
    if (!cx.empty()) {
      auto hf = lstm_run_cached(net.char_fwd, cx, tr.char_f_tr[t]);
      x.insert(x.end(), hf.back().begin(), hf.back().end());
    } else {
      x.insert(x.end(), cfg.char_hidden, 0.0);
    }
    if (cfg.char_bidirectional) {
      std::vector<Vec>& cbx = tr.char_b_xs[t];
      cbx.assign(cx.rbegin(), cx.rend());
      if (!cbx.empty()) {
        auto hb = lstm_run_cached(net.char_bwd, cbx, tr.char_b_tr[t]);
        x.insert(x.end(), hb.back().begin(), hb.back().end());
      } else {
        x.insert(x.end(), cfg.char_hidden, 0.0);
      }
    }
    if (masks) {
      const Vec& m = (*masks)[t];
      if (m.size() != x.size())
        throw std::invalid_argument("dropout mask width mismatch");
      for (size_t k = 0; k < x.size(); ++k) x[k] *= m[k];
    }
    tr.xs_fwd[t] = std::move(x);
  }
  tr.xs_bwd.assign(tr.xs_fwd.rbegin(), tr.xs_fwd.rend());
  auto hf = lstm_run_cached(net.tok_fwd, tr.xs_fwd, tr.tok_f_tr);
  auto hb = lstm_run_cached(net.tok_bwd, tr.xs_bwd, tr.tok_b_tr);
  tr.lstm_out.assign(L, Vec());
  tr.head_tr.assign(L, {});
  Mat em(L, cfg.num_labels);
  for (size_t t = 0; t < L; ++t) {
    Vec& out = tr.lstm_out[t];
    out = hf[t];
    const Vec& back = hb[L - 1 - t];
    out.insert(out.end(), back.begin(), back.end());
    Vec logits = ffn_forward_cached(net.head, out, tr.head_tr[t]);
    for (size_t k = 0; k < cfg.num_labels; ++k) em(t, k) = logits[k];
  }
  return em;
}

}  // namespace

Mat tagger_emissions(const TaggerNet& net, const EncodedSentence& sent) {
  SentenceTrace tr;
  return forward_sentence(net, sent, nullptr, tr);
}

Mat tagger_forward_p(const TaggerNet& net, const EncodedSentence& sent) {
  Mat em = tagger_emissions(net, sent);
  Mat p(em.rows(), em.cols());
  Vec row(em.cols());
  for (size_t t = 0; t < em.rows(); ++t) {
    for (size_t k = 0; k < em.cols(); ++k) row[k] = em(t, k);
    Vec sm = softmax(row);
    for (size_t k = 0; k < em.cols(); ++k) p(t, k) = sm[k];
  }
  return p;
}

TaggerGrads TaggerGrads::zero(const TaggerNet& net) {
  TaggerGrads g;
  g.char_embedding = Mat(net.cfg.char_vocab, net.cfg.char_dim);
  g.char_fwd = LstmGrads::zero(net.char_fwd);
  if (net.cfg.char_bidirectional) g.char_bwd = LstmGrads::zero(net.char_bwd);
  g.tok_fwd = LstmGrads::zero(net.tok_fwd);
  g.tok_bwd = LstmGrads::zero(net.tok_bwd);
  g.head = FfnGrads::zero(net.head);
  if (net.cfg.use_crf)
    g.crf_transitions = Mat(net.cfg.num_labels + 2, net.cfg.num_labels + 2);
  return g;
}

void TaggerGrads::clear() {
  char_embedding.fill(0.0);
  char_fwd.clear();
  char_bwd.clear();
  tok_fwd.clear();
  tok_bwd.clear();
  head.clear();
  crf_transitions.fill(0.0);
}

namespace {

double loss_and_demissions(const TaggerNet& net, const EncodedSentence& sent,
                           LossKind kind, const Mat& em, Mat& d_em,
                           Mat* d_trans) {
  const size_t L = em.rows(), K = em.cols();
  if (sent.gold.size() != L)
    throw std::invalid_argument("gold tag count mismatch");
  for (int y : sent.gold)
    if (y < 0 || static_cast<size_t>(y) >= K)
      throw std::invalid_argument("gold label out of range");
  if (kind == LossKind::CrfNegLogLik) {
    if (!net.cfg.use_crf)
      throw std::invalid_argument("crf loss on a net without a crf layer");
    CrfNllGrad g = crf_nll_grad(net.crf, em, sent.gold);
    d_em = std::move(g.d_emissions);
    if (d_trans) {
      // element-wise accumulate; the caller's gradient buffers are
      // aliased by long-lived TensorRef views and must never reallocate
      auto& dst = d_trans->raw();
      const auto& src = g.d_transitions.raw();
      for (size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    return g.nll;
  }
  d_em = Mat(L, K);
  double loss = 0.0;
  Vec row(K);
  for (size_t t = 0; t < L; ++t) {
    for (size_t k = 0; k < K; ++k) row[k] = em(t, k);
    Vec p = softmax(row);
    loss -= std::log(p[sent.gold[t]]);
    for (size_t k = 0; k < K; ++k) d_em(t, k) = p[k];
    d_em(t, sent.gold[t]) -= 1.0;
  }
  return loss;
}

}  // namespace

double tagger_loss(const TaggerNet& net, const EncodedSentence& sent,
                   LossKind kind, const std::vector<Vec>* masks) {
  SentenceTrace tr;
  Mat em = forward_sentence(net, sent, masks, tr);
  const size_t L = em.rows(), K = em.cols();
  if (sent.gold.size() != L)
    throw std::invalid_argument("gold tag count mismatch");
  if (kind == LossKind::CrfNegLogLik) {
    if (!net.cfg.use_crf)
      throw std::invalid_argument("crf loss on a net without a crf layer");
    return crf_log_partition(net.crf, em) - crf_gold_score(net.crf, em, sent.gold);
  }
  double loss = 0.0;
  Vec row(K);
  for (size_t t = 0; t < L; ++t) {
    const int y = sent.gold[t];
    if (y < 0 || static_cast<size_t>(y) >= K)
      throw std::invalid_argument("gold label out of range");
    for (size_t k = 0; k < K; ++k) row[k] = em(t, k);
    Vec p = softmax(row);
    loss -= std::log(p[y]);
  }
  return loss;
}

double tagger_loss_grad(const TaggerNet& net, const EncodedSentence& sent,
                        LossKind kind, const std::vector<Vec>* masks,
                        TaggerGrads& g) {
  const TaggerNetConfig& cfg = net.cfg;
  SentenceTrace tr;
  Mat em = forward_sentence(net, sent, masks, tr);
  const size_t L = em.rows();

  Mat d_em;
  const double loss = loss_and_demissions(net, sent, kind, em, d_em,
                                          cfg.use_crf ? &g.crf_transitions : nullptr);

  // head backward per token
  std::vector<Vec> d_out(L);
  Vec d_logits(cfg.num_labels);
  for (size_t t = 0; t < L; ++t) {
    for (size_t k = 0; k < cfg.num_labels; ++k) d_logits[k] = d_em(t, k);
    d_out[t] = ffn_backward(net.head, tr.lstm_out[t], tr.head_tr[t], d_logits,
                            g.head);
  }
  // split into forward/backward token-LSTM hidden grads
  std::vector<Vec> dh_f(L, Vec(cfg.token_hidden, 0.0));
  std::vector<Vec> dh_b(L, Vec(cfg.token_hidden, 0.0));
  for (size_t t = 0; t < L; ++t) {
    for (size_t k = 0; k < cfg.token_hidden; ++k) {
      dh_f[t][k] = d_out[t][k];
      dh_b[L - 1 - t][k] = d_out[t][cfg.token_hidden + k];
    }
  }
  std::vector<Vec> dx_f =
      lstm_backward(net.tok_fwd, tr.xs_fwd, tr.tok_f_tr, dh_f, g.tok_fwd);
  std::vector<Vec> dx_b =
      lstm_backward(net.tok_bwd, tr.xs_bwd, tr.tok_b_tr, dh_b, g.tok_bwd);

  for (size_t t = 0; t < L; ++t) {
    Vec dx = dx_f[t];
    add_scaled(dx, dx_b[L - 1 - t], 1.0);
    if (masks) {
      const Vec& m = (*masks)[t];
      for (size_t k = 0; k < dx.size(); ++k) dx[k] *= m[k];
    }
    // first token_dim entries belong to the frozen word vector: dropped
    const size_t nchars = sent.tokens[t].char_rows.size();
    if (nchars == 0) continue;
    const size_t base = cfg.token_dim;
    std::vector<Vec> dh_cf(nchars, Vec(cfg.char_hidden, 0.0));
    for (size_t k = 0; k < cfg.char_hidden; ++k)
      dh_cf[nchars - 1][k] = dx[base + k];
    std::vector<Vec> dxc = lstm_backward(net.char_fwd, tr.char_f_xs[t],
                                         tr.char_f_tr[t], dh_cf, g.char_fwd);
    for (size_t ci = 0; ci < nchars; ++ci) {
      double* row = g.char_embedding.row(sent.tokens[t].char_rows[ci]);
      for (size_t k = 0; k < cfg.char_dim; ++k) row[k] += dxc[ci][k];
    }
    if (cfg.char_bidirectional) {
      std::vector<Vec> dh_cb(nchars, Vec(cfg.char_hidden, 0.0));
      for (size_t k = 0; k < cfg.char_hidden; ++k)
        dh_cb[nchars - 1][k] = dx[base + cfg.char_hidden + k];
      std::vector<Vec> dxcb = lstm_backward(net.char_bwd, tr.char_b_xs[t],
                                            tr.char_b_tr[t], dh_cb, g.char_bwd);
      // feed order was reversed characters
      for (size_t ci = 0; ci < nchars; ++ci) {
        double* row =
            g.char_embedding.row(sent.tokens[t].char_rows[nchars - 1 - ci]);
        for (size_t k = 0; k < cfg.char_dim; ++k) row[k] += dxcb[ci][k];
      }
    }
  }
  return loss;
}

void TrainConfig::validate() const {
  if (learning_rate < 0) throw std::invalid_argument("negative learning rate");
  if (dropout_rate < 0 || dropout_rate >= 1)
    throw std::invalid_argument("dropout rate must lie in [0, 1)");
  if (gradient_clip <= 0) throw std::invalid_argument("gradient clip must be positive");
}

std::vector<TensorRef> trainable_tensors(TaggerNet& net) {
  std::vector<TensorRef> out;
  auto push = [&](std::string name, std::vector<double>& v) {
    out.push_back({std::move(name), v.data(), v.size()});
  };
  auto push_lstm = [&](const std::string& prefix, LstmParams& p) {
    push(prefix + ".w_i", p.w_i.raw());
    push(prefix + ".w_f", p.w_f.raw());
    push(prefix + ".w_o", p.w_o.raw());
    push(prefix + ".w_c", p.w_c.raw());
    push(prefix + ".u_i", p.u_i.raw());
    push(prefix + ".u_f", p.u_f.raw());
    push(prefix + ".u_o", p.u_o.raw());
    push(prefix + ".u_c", p.u_c.raw());
    push(prefix + ".b_i", p.b_i);
    push(prefix + ".b_f", p.b_f);
    push(prefix + ".b_o", p.b_o);
    push(prefix + ".b_c", p.b_c);
  };
  push("char_embedding", net.char_embedding.raw());
  push_lstm("char_fwd", net.char_fwd);
  if (net.cfg.char_bidirectional) push_lstm("char_bwd", net.char_bwd);
  push_lstm("tok_fwd", net.tok_fwd);
  push_lstm("tok_bwd", net.tok_bwd);
  for (size_t l = 0; l < net.head.layers.size(); ++l) {
    push("head." + std::to_string(l) + ".w", net.head.layers[l].w.raw());
    push("head." + std::to_string(l) + ".b", net.head.layers[l].b);
  }
  if (net.cfg.use_crf) push("crf.transitions", net.crf.transitions.raw());
  return out;
}

std::vector<TensorRef> grad_tensors(const TaggerNet& net, TaggerGrads& g) {
  std::vector<TensorRef> out;
  auto push = [&](std::string name, std::vector<double>& v) {
    out.push_back({std::move(name), v.data(), v.size()});
  };
  auto push_lstm = [&](const std::string& prefix, LstmGrads& p) {
    push(prefix + ".w_i", p.w_i.raw());
    push(prefix + ".w_f", p.w_f.raw());
    push(prefix + ".w_o", p.w_o.raw());
    push(prefix + ".w_c", p.w_c.raw());
    push(prefix + ".u_i", p.u_i.raw());
    push(prefix + ".u_f", p.u_f.raw());
    push(prefix + ".u_o", p.u_o.raw());
    push(prefix + ".u_c", p.u_c.raw());
    push(prefix + ".b_i", p.b_i);
    push(prefix + ".b_f", p.b_f);
    push(prefix + ".b_o", p.b_o);
    push(prefix + ".b_c", p.b_c);
  };
  push("char_embedding", g.char_embedding.raw());
  push_lstm("char_fwd", g.char_fwd);
  if (net.cfg.char_bidirectional) push_lstm("char_bwd", g.char_bwd);
  push_lstm("tok_fwd", g.tok_fwd);
  push_lstm("tok_bwd", g.tok_bwd);
  for (size_t l = 0; l < g.head.w.size(); ++l) {
    push("head." + std::to_string(l) + ".w", g.head.w[l].raw());
    push("head." + std::to_string(l) + ".b", g.head.b[l]);
  }
  if (net.cfg.use_crf) push("crf.transitions", g.crf_transitions.raw());
  return out;
}

double sgd_epoch(TaggerNet& net, const std::vector<EncodedSentence>& data,
                 const TrainConfig& cfg, LossKind kind, Rng& rng) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("empty dataset");
  std::vector<size_t> order(data.size());
  std::iota(order.begin(), order.end(), size_t{0});
  rng.shuffle(order);
  TaggerGrads grads = TaggerGrads::zero(net);
  auto params = trainable_tensors(net);
  auto gview = grad_tensors(net, grads);
  double total = 0.0;
  std::vector<Vec> masks;
  for (size_t idx : order) {
    const EncodedSentence& sent = data[idx];
    const std::vector<Vec>* mask_ptr = nullptr;
    if (cfg.dropout_rate > 0.0) {
      masks.assign(sent.tokens.size(), Vec(net.cfg.lstm_input()));
      const double keep = 1.0 / (1.0 - cfg.dropout_rate);
      for (Vec& m : masks)
        for (double& v : m)
          v = rng.next_double() < cfg.dropout_rate ? 0.0 : keep;
      mask_ptr = &masks;
    }
    grads.clear();
    const double loss = tagger_loss_grad(net, sent, kind, mask_ptr, grads);
    if (!std::isfinite(loss))
      throw std::runtime_error("non-finite loss during sgd epoch");
    total += loss;
    double norm2 = 0.0;
    for (const TensorRef& t : gview)
      for (size_t k = 0; k < t.size; ++k) norm2 += t.data[k] * t.data[k];
    const double norm = std::sqrt(norm2);
    const double scale = (norm > cfg.gradient_clip && norm > 0.0)
                             ? cfg.gradient_clip / norm
                             : 1.0;
    for (size_t i = 0; i < params.size(); ++i)
      for (size_t k = 0; k < params[i].size; ++k)
        params[i].data[k] -= cfg.learning_rate * scale * gview[i].data[k];
  }
  return total / static_cast<double>(data.size());
}

double grad_check(TaggerNet& net, const EncodedSentence& sent, LossKind kind,
                  double epsilon) {
  TaggerGrads grads = TaggerGrads::zero(net);
  tagger_loss_grad(net, sent, kind, nullptr, grads);
  auto params = trainable_tensors(net);
  auto gview = grad_tensors(net, grads);
  double worst = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    for (size_t k = 0; k < params[i].size; ++k) {
      double& p = params[i].data[k];
      const double saved = p;
      p = saved + epsilon;
      const double lp = tagger_loss(net, sent, kind);
      p = saved - epsilon;
      const double lm = tagger_loss(net, sent, kind);
      p = saved;
      const double gn = (lp - lm) / (2.0 * epsilon);
      const double ga = gview[i].data[k];
      const double rel =
          std::abs(ga - gn) / std::max({std::abs(ga), std::abs(gn), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace deid
