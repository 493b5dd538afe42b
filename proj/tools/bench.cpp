// deid-bench: wall-time comparison of the serial reference kernels
// against their OpenMP counterparts, with a bitwise equality check on
// every output. The three kernels cover the batch-parallel surfaces:
// corpus evaluation, brute-force candidate scoring, shadow training.

#include "deid/attacks.hpp"
#include "deid/corpus.hpp"
#include "deid/embeddings.hpp"
#include "deid/parallel.hpp"
#include "deid/perturb.hpp"
#include "deid/tagger.hpp"

#include <chrono>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

namespace {

using Clock = std::chrono::steady_clock;

double seconds_of(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

template <typename F>
double timed(F&& f) {
  const auto a = Clock::now();
  f();
  return seconds_of(a, Clock::now());
}

struct Row {
  const char* kernel;
  double serial_s;
  double parallel_s;
  bool identical;
};

void print_rows(const std::vector<Row>& rows) {
  std::printf("%-22s %10s %10s %9s  %s\n", "kernel", "serial", "parallel",
              "speedup", "bitwise");
  for (const Row& r : rows)
    std::printf("%-22s %9.3fs %9.3fs %8.2fx  %s\n", r.kernel, r.serial_s,
                r.parallel_s, r.serial_s / r.parallel_s,
                r.identical ? "identical" : "DIVERGED");
}

bool same_weights(const deid::TaggerModel& a, const deid::TaggerModel& b) {
  auto ta = deid::trainable_tensors(const_cast<deid::TaggerNet&>(a.net));
  auto tb = deid::trainable_tensors(const_cast<deid::TaggerNet&>(b.net));
  if (ta.size() != tb.size()) return false;
  for (size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].size != tb[i].size) return false;
    for (size_t j = 0; j < ta[i].size; ++j)
      if (ta[i].data[j] != tb[i].data[j]) return false;
  }
  return true;
}

bool same_metrics(const deid::Metrics& a, const deid::Metrics& b) {
  auto eq = [](const deid::ClassMetrics& x, const deid::ClassMetrics& y) {
    return x.tp == y.tp && x.fp == y.fp && x.fn == y.fn &&
           x.precision == y.precision && x.recall == y.recall && x.f1 == y.f1;
  };
  if (!eq(a.overall, b.overall) || a.per_class.size() != b.per_class.size())
    return false;
  for (const auto& [label, m] : a.per_class) {
    auto it = b.per_class.find(label);
    if (it == b.per_class.end() || !eq(m, it->second)) return false;
  }
  return true;
}

}  // namespace

int main() {
  std::printf("threads available: %d\n\n", deid::max_threads());

  // one shared desk-scale setup
  const deid::NameDict dict = deid::synth_name_dictionary(400, 120, 120, 7);
  deid::SynthConfig sc;
  sc.n_reports = 48;
  sc.names_per_report = 3;
  sc.min_repetition_quota = 4;
  sc.seed = 7;
  const deid::Corpus corpus = deid::generate_synthetic_corpus(sc, dict).corpus;

  std::set<std::string> vocab;
  for (const auto& rep : corpus.reports)
    for (const auto& s : rep.sentences)
      for (size_t t = 0; t < s.tokens.size(); ++t)
        if (static_cast<size_t>(s.gold_tags[t]) == corpus.tagset.o_index)
          vocab.insert(deid::to_lower(s.tokens[t].text));
  const deid::EmbeddingTable emb =
      deid::synth_embedding({vocab.begin(), vocab.end()}, 24, 7);

  deid::TaggerModelConfig mcfg;
  mcfg.char_dim = 8;
  mcfg.char_hidden = 8;
  mcfg.token_hidden = 16;
  deid::TrainConfig tcfg;
  tcfg.max_epochs = 4;
  tcfg.seed = 7;
  std::printf("training the probe tagger (%zu reports, %zu epochs)...\n",
              corpus.reports.size(), tcfg.max_epochs);
  const deid::TaggerModel model =
      deid::train_tagger(corpus, emb, mcfg, tcfg).model;

  std::vector<Row> rows;

  {
    deid::Metrics ms, mp;
    const double ts = timed([&] {
      ms = deid::evaluate(model, corpus, deid::Split::Train, deid::Exec::Serial);
    });
    const double tp = timed([&] {
      mp = deid::evaluate(model, corpus, deid::Split::Train, deid::Exec::Parallel);
    });
    rows.push_back({"evaluate", ts, tp, same_metrics(ms, mp)});
  }

  {
    const auto picks = deid::select_repetition_reports(corpus, 6, 1, 7);
    const deid::Report& rep = corpus.reports.at(picks.at(0));
    deid::RankResult rs, rp;
    const double ts = timed([&] {
      rs = deid::brute_force_rank(model, rep, dict.surnames, deid::Exec::Serial);
    });
    const double tp = timed([&] {
      rp = deid::brute_force_rank(model, rep, dict.surnames, deid::Exec::Parallel);
    });
    rows.push_back({"brute-force scoring", ts, tp,
                    rs.candidate_scores == rp.candidate_scores &&
                        rs.true_name_rank == rp.true_name_rank});
  }

  {
    const deid::NameInventory inv = deid::build_name_inventory(corpus);
    const deid::NameDict outside = deid::make_outside_dict(dict, inv);
    const deid::ShadowPlan plan = deid::build_shadow_plan(4, 7);
    const auto corpora = deid::build_shadow_corpora(corpus, inv, outside, plan);
    deid::TrainConfig protocol;
    protocol.max_epochs = 2;
    std::vector<deid::TaggerModel> shs, shp;
    const double ts = timed([&] {
      shs = deid::train_shadow_models(corpora, emb, mcfg, protocol, plan,
                                      deid::Exec::Serial);
    });
    const double tp = timed([&] {
      shp = deid::train_shadow_models(corpora, emb, mcfg, protocol, plan,
                                      deid::Exec::Parallel);
    });
    bool same = shs.size() == shp.size();
    for (size_t k = 0; same && k < shs.size(); ++k)
      same = same_weights(shs[k], shp[k]);
    rows.push_back({"shadow training", ts, tp, same});
  }

  std::printf("\n");
  print_rows(rows);
  for (const Row& r : rows)
    if (!r.identical) return 1;
  return 0;
}
