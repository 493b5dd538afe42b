#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deid/attacks.hpp"
#include "deid/corpus.hpp"
#include "deid/embeddings.hpp"
#include "deid/parallel.hpp"
#include "deid/tagger.hpp"

#include <atomic>
#include <set>
#include <vector>

using namespace deid;

namespace {

struct Fixture {
  Corpus corpus;
  NameDict dict;
  NameInventory inv;
  NameDict outside;
  EmbeddingTable emb;
  TaggerModelConfig mcfg;
  TaggerModel model;

  Fixture() {
    dict = synth_name_dictionary(170, 90, 90, 71);
    SynthConfig sc;
    sc.n_reports = 12;
    sc.min_repetition_quota = 2;
    sc.seed = 71;
    corpus = generate_synthetic_corpus(sc, dict).corpus;
    inv = build_name_inventory(corpus);
    outside = make_outside_dict(dict, inv);

    std::set<std::string> vocab;
    for (const Report& rep : corpus.reports)
      for (const AnnotatedSentence& s : rep.sentences)
        for (size_t t = 0; t < s.tokens.size(); ++t)
          if (static_cast<size_t>(s.gold_tags[t]) == corpus.tagset.o_index)
            vocab.insert(to_lower(s.tokens[t].text));
    emb = synth_embedding({vocab.begin(), vocab.end()}, 12, 71);

    mcfg.char_dim = 8;
    mcfg.char_hidden = 8;
    mcfg.token_hidden = 16;

    TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.max_epochs = 3;
    tc.seed = 71;
    model = train_tagger(corpus, emb, mcfg, tc).model;
  }
};

bool same_metrics(const Metrics& a, const Metrics& b) {
  if (a.overall.tp != b.overall.tp || a.overall.fp != b.overall.fp ||
      a.overall.fn != b.overall.fn)
    return false;
  if (a.per_class.size() != b.per_class.size()) return false;
  for (const auto& [label, m] : a.per_class) {
    const auto it = b.per_class.find(label);
    if (it == b.per_class.end()) return false;
    if (m.tp != it->second.tp || m.fp != it->second.fp || m.fn != it->second.fn)
      return false;
    if (m.precision != it->second.precision || m.recall != it->second.recall ||
        m.f1 != it->second.f1)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("for_each_index covers every index exactly once in both modes") {
  for (Exec exec : {Exec::Serial, Exec::Parallel}) {
    const size_t n = 257;
    std::vector<std::atomic<int>> hits(n);
    for (auto& h : hits) h = 0;
    for_each_index(exec, n, [&](size_t i) { hits[i] += 1; });
    for (size_t i = 0; i < n; ++i) CHECK(hits[i] == 1);
  }
  // n = 0 runs nothing
  bool touched = false;
  for_each_index(Exec::Parallel, 0, [&](size_t) { touched = true; });
  CHECK_FALSE(touched);
}

TEST_CASE("evaluate is bitwise identical across execution modes") {
  const Fixture fx;
  for (Split split : {Split::Train, Split::Test}) {
    const Metrics serial = evaluate(fx.model, fx.corpus, split, Exec::Serial);
    const Metrics parallel = evaluate(fx.model, fx.corpus, split, Exec::Parallel);
    CHECK(same_metrics(serial, parallel));
  }
}

TEST_CASE("extract_name_probs is bitwise identical across execution modes") {
  const Fixture fx;
  std::vector<std::vector<TokenPos>> positions;
  for (const Report& r : fx.corpus.reports)
    positions.push_back(r.split == Split::Train
                            ? r.surname_positions
                            : std::vector<TokenPos>{});
  const auto serial =
      extract_name_probs(fx.model, fx.corpus, positions, NameClass::Surname,
                         VariantKind::Orig, Exec::Serial);
  const auto parallel =
      extract_name_probs(fx.model, fx.corpus, positions, NameClass::Surname,
                         VariantKind::Orig, Exec::Parallel);
  REQUIRE(serial.size() == parallel.size());
  REQUIRE_FALSE(serial.empty());
  for (size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].report_id == parallel[i].report_id);
    CHECK(serial[i].sentence_index == parallel[i].sentence_index);
    CHECK(serial[i].token_index == parallel[i].token_index);
    CHECK(serial[i].p == parallel[i].p);
    CHECK(serial[i].score == parallel[i].score);
    CHECK(serial[i].name == parallel[i].name);
  }
}

TEST_CASE("brute-force candidate scan is bitwise identical across modes") {
  const Fixture fx;
  const Report* heavy = nullptr;
  for (const Report& r : fx.corpus.reports)
    if (r.split == Split::Train && r.surname_positions.size() >= 2) {
      heavy = &r;
      break;
    }
  REQUIRE(heavy != nullptr);
  OrderedNames dict;
  for (size_t i = 0; i < 40; ++i) dict.add(fx.dict.surnames[i]);

  const RankResult serial = brute_force_rank(fx.model, *heavy, dict, Exec::Serial);
  const RankResult parallel =
      brute_force_rank(fx.model, *heavy, dict, Exec::Parallel);
  CHECK(serial.candidate_scores == parallel.candidate_scores);
  CHECK(serial.true_name_rank == parallel.true_name_rank);
  CHECK(serial.per_occurrence_ranks == parallel.per_occurrence_ranks);
  CHECK(serial.true_index == parallel.true_index);
}

TEST_CASE("shadow training and membership features match across modes") {
  const Fixture fx;
  const ShadowPlan plan = build_shadow_plan(4, 71);
  const std::vector<Corpus> shadows =
      build_shadow_corpora(fx.corpus, fx.inv, fx.outside, plan);
  TrainConfig protocol;
  protocol.learning_rate = 0.05;
  protocol.max_epochs = 2;

  const auto serial = train_shadow_models(shadows, fx.emb, fx.mcfg, protocol,
                                          plan, Exec::Serial);
  const auto parallel = train_shadow_models(shadows, fx.emb, fx.mcfg, protocol,
                                            plan, Exec::Parallel);
  REQUIRE(serial.size() == parallel.size());
  for (size_t k = 0; k < serial.size(); ++k) {
    auto a = trainable_tensors(const_cast<TaggerNet&>(serial[k].net));
    auto b = trainable_tensors(const_cast<TaggerNet&>(parallel[k].net));
    REQUIRE(a.size() == b.size());
    for (size_t t = 0; t < a.size(); ++t) {
      REQUIRE(a[t].size == b[t].size);
      for (size_t j = 0; j < a[t].size; ++j) CHECK(a[t].data[j] == b[t].data[j]);
    }
  }

  const MembershipDataset ds_serial =
      build_membership_dataset(serial, shadows, plan, 71, Exec::Serial);
  const MembershipDataset ds_parallel =
      build_membership_dataset(serial, shadows, plan, 71, Exec::Parallel);
  REQUIRE(ds_serial.train.size() == ds_parallel.train.size());
  REQUIRE(ds_serial.validation.size() == ds_parallel.validation.size());
  for (size_t i = 0; i < ds_serial.train.size(); ++i) {
    CHECK(ds_serial.train[i].label == ds_parallel.train[i].label);
    CHECK(ds_serial.train[i].feature == ds_parallel.train[i].feature);
    CHECK(ds_serial.train[i].source_shadow == ds_parallel.train[i].source_shadow);
  }
  for (size_t i = 0; i < ds_serial.validation.size(); ++i) {
    CHECK(ds_serial.validation[i].label == ds_parallel.validation[i].label);
    CHECK(ds_serial.validation[i].feature == ds_parallel.validation[i].feature);
  }
}
