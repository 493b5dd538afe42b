#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deid/attacks.hpp"
#include "deid/corpus.hpp"
#include "deid/embeddings.hpp"
#include "deid/rng.hpp"
#include "deid/stats.hpp"

#include <algorithm>
#include <map>
#include <set>

using namespace deid;

namespace {

std::vector<double> random_scores(Rng& rng, size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.next_double();
  return v;
}

// exhaustive single-threshold search: every pooled value as threshold,
// both orientations
double oracle_best_balanced(const std::vector<double>& mem,
                            const std::vector<double>& non) {
  std::vector<double> thresholds = mem;
  thresholds.insert(thresholds.end(), non.begin(), non.end());
  thresholds.push_back(*std::max_element(thresholds.begin(), thresholds.end()) +
                       1.0);
  double best = 0;
  for (double t : thresholds) {
    for (int above = 0; above < 2; ++above) {
      size_t tp = 0, tn = 0;
      for (double s : mem) tp += above ? s >= t : s < t;
      for (double s : non) tn += above ? s < t : s >= t;
      best = std::max(best, 0.5 * (static_cast<double>(tp) / mem.size() +
                                   static_cast<double>(tn) / non.size()));
    }
  }
  return best;
}

struct NetFixture {
  Corpus corpus;
  NameDict dict;
  NameInventory inv;
  NameDict outside;
  EmbeddingTable emb;
  TaggerModelConfig mcfg;

  explicit NetFixture(size_t reports = 12, uint64_t seed = 61) {
    dict = synth_name_dictionary(reports + 160, 90, 90, seed);
    SynthConfig sc;
    sc.n_reports = reports;
    sc.min_repetition_quota = 2;
    sc.seed = seed;
    corpus = generate_synthetic_corpus(sc, dict).corpus;
    inv = build_name_inventory(corpus);
    outside = make_outside_dict(dict, inv);

    std::set<std::string> vocab;
    for (const Report& rep : corpus.reports)
      for (const AnnotatedSentence& s : rep.sentences)
        for (size_t t = 0; t < s.tokens.size(); ++t)
          if (static_cast<size_t>(s.gold_tags[t]) == corpus.tagset.o_index)
            vocab.insert(to_lower(s.tokens[t].text));
    emb = synth_embedding({vocab.begin(), vocab.end()}, 12, seed);

    mcfg.char_dim = 8;
    mcfg.char_hidden = 8;
    mcfg.token_hidden = 16;
  }

  TaggerModel quick_model(size_t epochs = 2, uint64_t seed = 61) const {
    TrainConfig tc;
    tc.learning_rate = 0.05;
    tc.max_epochs = epochs;
    tc.seed = seed;
    return train_tagger(corpus, emb, mcfg, tc).model;
  }
};

// synthetic membership example with a separable first coordinate
MembershipExample planted_example(Rng& rng, int label, bool informative) {
  MembershipExample ex;
  ex.label = label;
  ex.feature.resize(4);
  for (double& f : ex.feature) f = 0.2 * rng.next_double();
  if (informative) ex.feature[0] = (label > 0 ? 0.8 : 0.1) + 0.1 * rng.next_double();
  return ex;
}

std::vector<MembershipExample> planted_set(Rng& rng, size_t per_class,
                                           bool informative) {
  std::vector<MembershipExample> out;
  for (size_t i = 0; i < per_class; ++i) {
    out.push_back(planted_example(rng, +1, informative));
    out.push_back(planted_example(rng, -1, informative));
  }
  return out;
}

}  // namespace

TEST_CASE("naive cutoff matches the exhaustive threshold search") {
  Rng rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const auto mem = random_scores(rng, 1 + rng.below(30));
    const auto non = random_scores(rng, 1 + rng.below(30));
    const CutoffResult r = naive_cutoff(mem, non);
    CHECK(r.balanced_accuracy ==
          doctest::Approx(oracle_best_balanced(mem, non)).epsilon(1e-12));

    // counts are a real confusion table for the reported rule
    CHECK(r.tp + r.fn == mem.size());
    CHECK(r.tn + r.fp == non.size());
    size_t tp = 0, tn = 0;
    for (double s : mem) tp += r.members_above ? s >= r.threshold : s < r.threshold;
    for (double s : non) tn += r.members_above ? s < r.threshold : s >= r.threshold;
    CHECK(tp == r.tp);
    CHECK(tn == r.tn);
    CHECK(r.balanced_accuracy ==
          doctest::Approx(0.5 * (static_cast<double>(r.tp) / mem.size() +
                                 static_cast<double>(r.tn) / non.size()))
              .epsilon(1e-12));
  }
}

TEST_CASE("best balanced accuracy is (1 + D) / 2") {
  Rng rng(12);
  for (int rep = 0; rep < 100; ++rep) {
    const auto mem = random_scores(rng, 2 + rng.below(40));
    const auto non = random_scores(rng, 2 + rng.below(40));
    const double d = ks_two_sample(mem, non).d;
    CHECK(naive_cutoff(mem, non).balanced_accuracy ==
          doctest::Approx((1.0 + d) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("indistinguishable scores give balanced accuracy one half") {
  const CutoffResult r = naive_cutoff({1.0, 1.0, 1.0}, {1.0, 1.0});
  CHECK(r.balanced_accuracy == 0.5);
  CHECK_THROWS(naive_cutoff({}, {1.0}));
  CHECK_THROWS(naive_cutoff({1.0}, {}));
}

TEST_CASE("rank_candidates appends the true surname and ranks pessimistically") {
  const NetFixture fx;
  // pick a report with at least two surname occurrences
  const Report* heavy = nullptr;
  for (const Report& r : fx.corpus.reports)
    if (r.surname_positions.size() >= 2) { heavy = &r; break; }
  REQUIRE(heavy != nullptr);
  const std::string true_name =
      to_lower(heavy->sentences[heavy->surname_positions[0].sentence]
                   .tokens[heavy->surname_positions[0].token]
                   .text);

  OrderedNames dict;
  dict.add("aaaa");
  dict.add("bbbb");
  dict.add("cccc");
  REQUIRE_FALSE(dict.contains(true_name));

  // deterministic per-occurrence score: position index + candidate bonus
  std::map<std::string, double> bonus = {
      {"aaaa", 0.9}, {"bbbb", 0.5}, {"cccc", 0.5}, {true_name, 0.5}};
  const UnitScorer scorer = [&](const BruteUnit& unit) {
    std::vector<double> s(unit.positions.size());
    for (size_t j = 0; j < s.size(); ++j) s[j] = bonus.at(unit.candidate);
    return s;
  };

  const RankResult r = rank_candidates(*heavy, dict, scorer, Exec::Serial);
  CHECK(r.report_id == heavy->id);
  CHECK(r.candidate_count == 4);
  CHECK(r.true_index == 3);
  // one strictly better score, three tied at 0.5 including the true name
  CHECK(r.true_name_rank == 4);
  REQUIRE(r.per_occurrence_ranks.size() == heavy->surname_positions.size());
  for (size_t rank : r.per_occurrence_ranks) CHECK(rank == 4);
  REQUIRE(r.candidate_scores.size() == 4);
  CHECK(r.candidate_scores[0] == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(r.candidate_scores[3] == doctest::Approx(0.5).epsilon(1e-12));

  // a dictionary already containing the true name is not extended
  OrderedNames with_true = dict;
  with_true.add(true_name);
  const RankResult r2 = rank_candidates(*heavy, with_true, scorer, Exec::Serial);
  CHECK(r2.candidate_count == 4);
  CHECK(r2.true_index == 3);
}

TEST_CASE("brute-force rank is invariant under dictionary permutation") {
  const NetFixture fx;
  const TaggerModel model = fx.quick_model(3);
  const Report* heavy = nullptr;
  for (const Report& r : fx.corpus.reports)
    if (r.split == Split::Train && r.surname_positions.size() >= 2) {
      heavy = &r;
      break;
    }
  REQUIRE(heavy != nullptr);

  OrderedNames dict;
  for (size_t i = 0; i < 25; ++i) dict.add(fx.dict.surnames[i]);
  OrderedNames reversed;
  for (size_t i = dict.size(); i-- > 0;) reversed.add(dict[i]);

  const RankResult a = brute_force_rank(model, *heavy, dict, Exec::Serial);
  const RankResult b = brute_force_rank(model, *heavy, reversed, Exec::Serial);
  CHECK(a.true_name_rank == b.true_name_rank);
  CHECK(a.per_occurrence_ranks == b.per_occurrence_ranks);
  CHECK(a.candidate_count == b.candidate_count);

  std::vector<double> sa = a.candidate_scores, sb = b.candidate_scores;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  CHECK(sa == sb);

  for (double s : a.candidate_scores) {
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
  CHECK(a.true_name_rank >= 1);
  CHECK(a.true_name_rank <= a.candidate_count);
}

TEST_CASE("shadow plan fixes the index layout and derives distinct seeds") {
  CHECK_THROWS(build_shadow_plan(3, 1));
  const ShadowPlan plan = build_shadow_plan(5, 9);
  CHECK(plan.num_shadow == 5);
  CHECK(plan.target_index == 0);
  CHECK(plan.validation_index() == 4);
  CHECK(plan.attack_train_indices() == std::vector<size_t>{1, 2, 3});
  REQUIRE(plan.corpus_seeds.size() == 5);
  REQUIRE(plan.train_seeds.size() == 5);
  std::set<uint64_t> seeds(plan.corpus_seeds.begin(), plan.corpus_seeds.end());
  seeds.insert(plan.train_seeds.begin(), plan.train_seeds.end());
  CHECK(seeds.size() == 10);
  // same master seed, same plan
  const ShadowPlan again = build_shadow_plan(5, 9);
  CHECK(again.corpus_seeds == plan.corpus_seeds);
  CHECK(build_shadow_plan(5, 10).corpus_seeds != plan.corpus_seeds);
}

TEST_CASE("shadow corpora keep the original at index 0 and rename the rest") {
  const NetFixture fx;
  const ShadowPlan plan = build_shadow_plan(4, 21);
  const std::vector<Corpus> shadows =
      build_shadow_corpora(fx.corpus, fx.inv, fx.outside, plan);
  REQUIRE(shadows.size() == 4);

  auto surname_set = [](const Corpus& c) {
    std::set<std::string> names;
    for (const Report& r : c.reports)
      for (const TokenPos& p : r.surname_positions)
        names.insert(to_lower(r.sentences[p.sentence].tokens[p.token].text));
    return names;
  };

  CHECK(surname_set(shadows[0]) == surname_set(fx.corpus));
  const std::set<std::string> original = surname_set(fx.corpus);
  std::vector<std::set<std::string>> renamed;
  for (size_t k = 1; k < 4; ++k) {
    const Corpus& s = shadows[k];
    REQUIRE(s.reports.size() == fx.corpus.reports.size());
    for (size_t r = 0; r < s.reports.size(); ++r) {
      CHECK(s.reports[r].split == fx.corpus.reports[r].split);
      for (size_t i = 0; i < s.reports[r].sentences.size(); ++i)
        CHECK(s.reports[r].sentences[i].gold_tags ==
              fx.corpus.reports[r].sentences[i].gold_tags);
    }
    const std::set<std::string> names = surname_set(s);
    for (const std::string& n : names) {
      CHECK_FALSE(original.count(n));
      CHECK(fx.outside.surnames.contains(n));
    }
    renamed.push_back(names);
  }
  // pool is large enough for per-shadow slices, so shadows do not share names
  for (const std::string& n : renamed[0]) CHECK_FALSE(renamed[1].count(n));
  for (const std::string& n : renamed[1]) CHECK_FALSE(renamed[2].count(n));
}

TEST_CASE("membership dataset is exactly balanced with the right provenance") {
  const NetFixture fx;
  const ShadowPlan plan = build_shadow_plan(4, 33);
  const std::vector<Corpus> shadows =
      build_shadow_corpora(fx.corpus, fx.inv, fx.outside, plan);
  TrainConfig protocol;
  protocol.learning_rate = 0.05;
  protocol.max_epochs = 2;
  const std::vector<TaggerModel> models = train_shadow_models(
      shadows, fx.emb, fx.mcfg, protocol, plan, Exec::Serial);
  REQUIRE(models.size() == 4);

  const MembershipDataset ds =
      build_membership_dataset(models, shadows, plan, 33, Exec::Serial);
  REQUIRE_FALSE(ds.train.empty());
  REQUIRE_FALSE(ds.validation.empty());

  auto audit = [&](const std::vector<MembershipExample>& set,
                   const std::set<size_t>& allowed_sources) {
    size_t pos = 0, neg = 0;
    for (const MembershipExample& ex : set) {
      REQUIRE((ex.label == 1 || ex.label == -1));
      (ex.label == 1 ? pos : neg) += 1;
      CHECK(allowed_sources.count(ex.source_shadow));
      CHECK(ex.feature.size() == fx.corpus.tagset.size());
      double sum = 0;
      for (double f : ex.feature) {
        CHECK(f >= 0.0);
        sum += f;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(pos == neg);
  };
  audit(ds.train, {1, 2});
  audit(ds.validation, {3});

  // same seed, same dataset
  const MembershipDataset again =
      build_membership_dataset(models, shadows, plan, 33, Exec::Serial);
  REQUIRE(again.train.size() == ds.train.size());
  for (size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(again.train[i].label == ds.train[i].label);
    CHECK(again.train[i].feature == ds.train[i].feature);
  }
}

TEST_CASE("balancing also trims a negative-majority validation pool") {
  // this seed yields more non-member than member examples before
  // downsampling, exercising the other majority branch
  const uint64_t seed = 203;
  NameDict dict = synth_name_dictionary(212, 90, 90, seed);
  SynthConfig sc;
  sc.n_reports = 12;
  sc.seed = seed;
  const Corpus corpus = generate_synthetic_corpus(sc, dict).corpus;
  const NameInventory inv = build_name_inventory(corpus);
  const NameDict outside = make_outside_dict(dict, inv);
  std::set<std::string> vocab;
  for (const Report& rep : corpus.reports)
    for (const AnnotatedSentence& s : rep.sentences)
      for (size_t t = 0; t < s.tokens.size(); ++t)
        if (static_cast<size_t>(s.gold_tags[t]) == corpus.tagset.o_index)
          vocab.insert(to_lower(s.tokens[t].text));
  const EmbeddingTable emb =
      synth_embedding({vocab.begin(), vocab.end()}, 12, seed);
  TaggerModelConfig mcfg;
  mcfg.char_dim = 8;
  mcfg.char_hidden = 8;
  mcfg.token_hidden = 16;

  const ShadowPlan plan = build_shadow_plan(4, seed);
  const std::vector<Corpus> shadows =
      build_shadow_corpora(corpus, inv, outside, plan);
  TrainConfig protocol;
  protocol.learning_rate = 0.05;
  protocol.max_epochs = 2;
  const std::vector<TaggerModel> models = train_shadow_models(
      shadows, emb, mcfg, protocol, plan, Exec::Serial);
  const MembershipDataset ds =
      build_membership_dataset(models, shadows, plan, seed, Exec::Serial);
  size_t vp = 0, vn = 0, tp = 0, tn = 0;
  for (const MembershipExample& ex : ds.validation) (ex.label == 1 ? vp : vn) += 1;
  for (const MembershipExample& ex : ds.train) (ex.label == 1 ? tp : tn) += 1;
  CHECK(vp == vn);
  CHECK(tp == tn);
  CHECK(vp > 0);
}

TEST_CASE("attack model learns a separable feature") {
  Rng rng(44);
  const auto train = planted_set(rng, 150, true);
  const auto valid = planted_set(rng, 80, true);
  AttackTrainConfig cfg;
  cfg.epochs = 60;
  cfg.hidden = 8;
  cfg.seed = 5;
  const AttackModel attack = train_attack_model(train, valid, cfg);
  CHECK(attack.train_accuracy >= 0.99);
  CHECK(attack.validation_accuracy >= 0.95);

  // probabilities line up with the planted rule
  Rng probe(45);
  const MembershipExample yes = planted_example(probe, +1, true);
  const MembershipExample no = planted_example(probe, -1, true);
  CHECK(attack_membership_prob(attack, yes.feature) > 0.5);
  CHECK(attack_membership_prob(attack, no.feature) < 0.5);
}

TEST_CASE("label-shuffled features leave the attack at chance") {
  Rng rng(46);
  // informative features, then labels reassigned at random: no signal left
  auto train = planted_set(rng, 150, true);
  auto valid = planted_set(rng, 100, true);
  std::vector<int> labels;
  for (const MembershipExample& ex : train) labels.push_back(ex.label);
  rng.shuffle(labels);
  for (size_t i = 0; i < train.size(); ++i) train[i].label = labels[i];
  labels.clear();
  for (const MembershipExample& ex : valid) labels.push_back(ex.label);
  rng.shuffle(labels);
  for (size_t i = 0; i < valid.size(); ++i) valid[i].label = labels[i];

  AttackTrainConfig cfg;
  cfg.epochs = 40;
  cfg.hidden = 8;
  cfg.seed = 6;
  const AttackModel attack = train_attack_model(train, valid, cfg);
  CHECK(attack.validation_accuracy > 0.5 - 0.07);
  CHECK(attack.validation_accuracy < 0.5 + 0.07);
}

TEST_CASE("degenerate attack inputs are rejected") {
  Rng rng(47);
  std::vector<MembershipExample> one_class;
  for (size_t i = 0; i < 10; ++i)
    one_class.push_back(planted_example(rng, +1, true));
  AttackTrainConfig cfg;
  CHECK_THROWS_WITH_AS(train_attack_model(one_class, {}, cfg),
                       "degenerate single-class input", std::invalid_argument);
  CHECK_THROWS_WITH_AS(train_attack_model({}, {}, cfg),
                       "empty attack training set", std::invalid_argument);
  const AttackModel blank;
  CHECK_THROWS_WITH_AS(attack_membership_prob(blank, Vec{0.1, 0.9}),
                       "untrained attack model", std::invalid_argument);
}

TEST_CASE("mia attack on a target produces a coherent report") {
  const NetFixture fx;
  const ShadowPlan plan = build_shadow_plan(4, 55);
  const std::vector<Corpus> shadows =
      build_shadow_corpora(fx.corpus, fx.inv, fx.outside, plan);
  TrainConfig protocol;
  protocol.learning_rate = 0.05;
  protocol.max_epochs = 2;
  const std::vector<TaggerModel> models = train_shadow_models(
      shadows, fx.emb, fx.mcfg, protocol, plan, Exec::Serial);
  const MembershipDataset ds =
      build_membership_dataset(models, shadows, plan, 55, Exec::Serial);
  AttackTrainConfig acfg;
  acfg.epochs = 20;
  acfg.hidden = 8;
  acfg.seed = 7;
  const AttackModel attack = train_attack_model(ds.train, ds.validation, acfg);

  OrderedNames dict;
  for (size_t i = 0; i < 20; ++i) dict.add(fx.dict.surnames[i]);
  for (ScoreAgg agg : {ScoreAgg::Mean, ScoreAgg::Max}) {
    const MiaReport report = mia_attack_target(attack, models[0], shadows, plan,
                                               dict, 2, 55, Exec::Serial, agg);
    CHECK(report.attack_train_accuracy >= 0.0);
    CHECK(report.attack_train_accuracy <= 1.0);
    CHECK(report.attack_validation_accuracy == attack.validation_accuracy);
    CHECK(report.target_example_accuracy >= 0.0);
    CHECK(report.target_example_accuracy <= 1.0);
    CHECK(report.target_report_accuracy >= 0.0);
    CHECK(report.target_report_accuracy <= 1.0);
    REQUIRE(report.ranks.size() == 2);
    for (const RankResult& r : report.ranks) {
      CHECK(r.true_name_rank >= 1);
      CHECK(r.true_name_rank <= r.candidate_count);
      CHECK(r.candidate_count >= dict.size());
    }
  }
}
