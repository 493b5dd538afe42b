#include "deid/attacks.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

namespace deid {

CutoffResult naive_cutoff(const std::vector<double>& member_scores,
                          const std::vector<double>& nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty())
    throw std::invalid_argument("empty score sample");
  std::vector<double> pooled = member_scores;
  pooled.insert(pooled.end(), nonmember_scores.begin(), nonmember_scores.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  std::vector<double> thresholds;
  thresholds.push_back(pooled.front() - 1.0);
  for (size_t i = 0; i + 1 < pooled.size(); ++i)
    thresholds.push_back(0.5 * (pooled[i] + pooled[i + 1]));
  thresholds.push_back(pooled.back() + 1.0);

  const double m = static_cast<double>(member_scores.size());
  const double n = static_cast<double>(nonmember_scores.size());
  CutoffResult best;
  best.balanced_accuracy = -1.0;
  for (double th : thresholds) {
    size_t mem_above = 0, non_above = 0;
    for (double s : member_scores) mem_above += s >= th;
    for (double s : nonmember_scores) non_above += s >= th;
    for (bool above : {true, false}) {
      CutoffResult r;
      r.threshold = th;
      r.members_above = above;
      if (above) {
        r.tp = mem_above;
        r.fp = non_above;
      } else {
        r.tp = member_scores.size() - mem_above;
        r.fp = nonmember_scores.size() - non_above;
      }
      r.fn = member_scores.size() - r.tp;
      r.tn = nonmember_scores.size() - r.fp;
      r.balanced_accuracy = 0.5 * (static_cast<double>(r.tp) / m +
                                   static_cast<double>(r.tn) / n);
      if (r.balanced_accuracy > best.balanced_accuracy) best = r;
    }
  }
  return best;
}

// ------------------------------------------------------------ rank attacks --

namespace {

// 1-based rank of scores[self], every tie counted against it
size_t pessimistic_rank(const std::vector<double>& scores, size_t self) {
  size_t rank = 1;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (i == self) continue;
    if (scores[i] >= scores[self]) ++rank;
  }
  return rank;
}

}  // namespace

RankResult rank_candidates(const Report& report, const OrderedNames& dict,
                           const UnitScorer& scorer, Exec exec) {
  if (report.surname_positions.empty())
    throw std::invalid_argument("report has no surname occurrences");
  const TokenPos first = report.surname_positions.front();
  const std::string true_name =
      to_lower(report.sentences[first.sentence].tokens[first.token].text);

  OrderedNames candidates = dict;
  candidates.add(true_name);  // no-op when already present
  size_t true_index = candidates.size();
  for (size_t i = 0; i < candidates.size(); ++i)
    if (candidates[i] == true_name) {
      true_index = i;
      break;
    }

  const BruteForceSubstituter sub(report, candidates);
  const size_t occurrences = report.surname_positions.size();
  std::vector<std::vector<double>> scores(sub.size());
  for_each_index(exec, sub.size(),
                 [&](size_t i) { scores[i] = scorer(sub.make(i)); });
  for (const auto& s : scores)
    if (s.size() != occurrences)
      throw std::logic_error("scorer returned a wrong-sized occurrence vector");

  RankResult r;
  r.report_id = report.id;
  r.candidate_count = sub.size();
  r.true_index = true_index;
  r.candidate_scores.resize(sub.size());
  for (size_t i = 0; i < sub.size(); ++i) {
    double acc = 0.0;
    for (double s : scores[i]) acc += s;
    r.candidate_scores[i] = acc / static_cast<double>(occurrences);
  }
  r.true_name_rank = pessimistic_rank(r.candidate_scores, true_index);
  r.per_occurrence_ranks.resize(occurrences);
  std::vector<double> column(sub.size());
  for (size_t j = 0; j < occurrences; ++j) {
    for (size_t i = 0; i < sub.size(); ++i) column[i] = scores[i][j];
    r.per_occurrence_ranks[j] = pessimistic_rank(column, true_index);
  }
  return r;
}

namespace {

// mean-free per-occurrence scores of one unit: P[gold tag] at each slot
std::vector<double> gold_prob_scores(const TaggerModel& model,
                                     const BruteUnit& unit) {
  std::map<size_t, std::vector<Vec>> cache;
  std::vector<double> out;
  out.reserve(unit.positions.size());
  for (const TokenPos& pos : unit.positions) {
    auto it = cache.find(pos.sentence);
    if (it == cache.end())
      it = cache.emplace(pos.sentence, predict_p(model, unit.sentences[pos.sentence]))
               .first;
    const int gold = unit.sentences[pos.sentence].gold_tags[pos.token];
    out.push_back(it->second[pos.token][gold]);
  }
  return out;
}

}  // namespace

RankResult brute_force_rank(const TaggerModel& model, const Report& report,
                            const OrderedNames& dict, Exec exec) {
  return rank_candidates(
      report, dict,
      [&](const BruteUnit& unit) { return gold_prob_scores(model, unit); }, exec);
}

// -------------------------------------------------------------- shadow MIA --

std::vector<size_t> ShadowPlan::attack_train_indices() const {
  std::vector<size_t> out;
  for (size_t k = 1; k + 1 < num_shadow; ++k) out.push_back(k);
  return out;
}

ShadowPlan build_shadow_plan(size_t num_shadow, uint64_t seed) {
  if (num_shadow < 4)
    throw std::invalid_argument(
        "shadow plan needs at least 4 shadows (target, two training, validation)");
  ShadowPlan plan;
  plan.num_shadow = num_shadow;
  plan.corpus_seeds.resize(num_shadow);
  plan.train_seeds.resize(num_shadow);
  for (size_t k = 0; k < num_shadow; ++k) {
    const std::string tag = std::to_string(k);
    plan.corpus_seeds[k] = derive_seed(seed, "shadow.corpus." + tag);
    plan.train_seeds[k] = derive_seed(seed, "shadow.train." + tag);
  }
  return plan;
}

namespace {

// shadow k's draw pool: its own slice when the pool is big enough
OrderedNames pool_slice(const OrderedNames& pool, size_t shadow, size_t num_shadow,
                        size_t n_reports) {
  const size_t variants = num_shadow - 1;  // shadows 1..S-1
  if (pool.size() < num_shadow * n_reports || variants == 0) return pool;
  const size_t width = pool.size() / variants;
  OrderedNames slice;
  const size_t lo = (shadow - 1) * width;
  for (size_t i = lo; i < lo + width; ++i) slice.add(pool[i]);
  return slice;
}

}  // namespace

std::vector<Corpus> build_shadow_corpora(const Corpus& corpus,
                                         const NameInventory& inventory,
                                         const NameDict& outside,
                                         const ShadowPlan& plan) {
  std::vector<Corpus> out;
  out.reserve(plan.num_shadow);
  out.push_back(corpus);
  const size_t n_reports = corpus.reports.size();
  for (size_t k = 1; k < plan.num_shadow; ++k) {
    NameDict slice;
    slice.surnames = pool_slice(outside.surnames, k, plan.num_shadow, n_reports);
    slice.given_male = pool_slice(outside.given_male, k, plan.num_shadow, n_reports);
    slice.given_female =
        pool_slice(outside.given_female, k, plan.num_shadow, n_reports);
    out.push_back(make_variant(corpus, VariantKind::SNGN2, inventory, slice,
                               plan.corpus_seeds[k])
                      .corpus);
  }
  return out;
}

std::vector<TaggerModel> train_shadow_models(const std::vector<Corpus>& corpora,
                                             const EmbeddingTable& emb,
                                             const TaggerModelConfig& mcfg,
                                             const TrainConfig& protocol,
                                             const ShadowPlan& plan,
                                             Exec exec) {
  if (corpora.size() != plan.num_shadow)
    throw std::invalid_argument("corpus count does not match the shadow plan");
  std::vector<TaggerModel> models(plan.num_shadow);
  for_each_index(exec, plan.num_shadow, [&](size_t k) {
    TrainConfig cfg = protocol;
    cfg.seed = plan.train_seeds[k];
    models[k] = train_tagger(corpora[k], emb, mcfg, cfg).model;
  });
  return models;
}

namespace {

std::vector<size_t> train_report_indices(const Corpus& corpus) {
  std::vector<size_t> out;
  for (size_t r = 0; r < corpus.reports.size(); ++r)
    if (corpus.reports[r].split == Split::Train) out.push_back(r);
  return out;
}

// softmax features at every surname and given-name slot of one report
std::vector<Vec> name_features(const TaggerModel& model, const Report& report) {
  std::vector<TokenPos> slots = report.surname_positions;
  slots.insert(slots.end(), report.given_positions.begin(),
               report.given_positions.end());
  std::sort(slots.begin(), slots.end());
  std::map<size_t, std::vector<Vec>> cache;
  std::vector<Vec> out;
  out.reserve(slots.size());
  for (const TokenPos& pos : slots) {
    auto it = cache.find(pos.sentence);
    if (it == cache.end())
      it = cache.emplace(pos.sentence, predict_p(model, report.sentences[pos.sentence]))
               .first;
    out.push_back(it->second[pos.token]);
  }
  return out;
}

struct FeatureJob {
  size_t model_k = 0;   // shadow whose model scores the report
  size_t corpus_j = 0;  // corpus the report lives in
  size_t report_r = 0;
  int label = 0;
};

std::vector<MembershipExample> run_feature_jobs(
    const std::vector<TaggerModel>& models, const std::vector<Corpus>& corpora,
    const std::vector<FeatureJob>& jobs, Exec exec) {
  std::vector<std::vector<MembershipExample>> per_job(jobs.size());
  for_each_index(exec, jobs.size(), [&](size_t i) {
    const FeatureJob& job = jobs[i];
    const Report& report = corpora[job.corpus_j].reports[job.report_r];
    for (Vec& f : name_features(models[job.model_k], report)) {
      MembershipExample ex;
      ex.feature = std::move(f);
      ex.label = job.label;
      ex.source_shadow = job.model_k;
      per_job[i].push_back(std::move(ex));
    }
  });
  std::vector<MembershipExample> out;
  for (auto& v : per_job)
    for (MembershipExample& e : v) out.push_back(std::move(e));
  return out;
}

// drop random majority-class examples until the classes match exactly
void balance_exact(std::vector<MembershipExample>& v, Rng& rng) {
  size_t pos = 0;
  for (const MembershipExample& e : v) pos += e.label == 1;
  const size_t neg = v.size() - pos;
  if (pos == neg) return;
  const int majority = pos > neg ? 1 : -1;
  const size_t excess = pos > neg ? pos - neg : neg - pos;
  std::vector<size_t> idx;
  for (size_t i = 0; i < v.size(); ++i)
    if (v[i].label == majority) idx.push_back(i);
  rng.shuffle(idx);
  idx.resize(excess);
  std::sort(idx.begin(), idx.end());
  std::vector<MembershipExample> kept;
  kept.reserve(v.size() - excess);
  size_t next_drop = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    if (next_drop < idx.size() && idx[next_drop] == i) {
      ++next_drop;
      continue;
    }
    kept.push_back(std::move(v[i]));
  }
  v = std::move(kept);
}

// the negative mix for shadow k: an equal number of train reports drawn
// without replacement from the given donor shadows
std::vector<FeatureJob> negative_jobs(size_t k, const std::vector<size_t>& donors,
                                      const std::vector<size_t>& train_reports,
                                      uint64_t seed) {
  std::vector<std::pair<size_t, size_t>> pool;  // (corpus, report)
  for (size_t j : donors)
    for (size_t r : train_reports) pool.emplace_back(j, r);
  if (pool.size() < train_reports.size())
    throw std::invalid_argument("not enough donor reports for the negative mix");
  Rng rng(seed);
  rng.shuffle(pool);
  std::vector<FeatureJob> jobs;
  for (size_t i = 0; i < train_reports.size(); ++i)
    jobs.push_back({k, pool[i].first, pool[i].second, -1});
  return jobs;
}

}  // namespace

MembershipDataset build_membership_dataset(const std::vector<TaggerModel>& models,
                                           const std::vector<Corpus>& corpora,
                                           const ShadowPlan& plan, uint64_t seed,
                                           Exec exec) {
  if (models.size() != plan.num_shadow || corpora.size() != plan.num_shadow)
    throw std::invalid_argument("models or corpora do not match the shadow plan");
  const std::vector<size_t> train_reports = train_report_indices(corpora[0]);
  if (train_reports.empty()) throw std::invalid_argument("no train reports");
  const std::vector<size_t> attack_train = plan.attack_train_indices();

  auto jobs_for_shadow = [&](size_t k) {
    std::vector<FeatureJob> jobs;
    for (size_t r : train_reports) jobs.push_back({k, k, r, 1});
    std::vector<size_t> donors;
    for (size_t j : attack_train)
      if (j != k) donors.push_back(j);
    const uint64_t mix_seed = derive_seed(seed, "mix." + std::to_string(k));
    for (const FeatureJob& j : negative_jobs(k, donors, train_reports, mix_seed))
      jobs.push_back(j);
    return jobs;
  };

  std::vector<FeatureJob> train_jobs, valid_jobs;
  for (size_t k : attack_train)
    for (const FeatureJob& j : jobs_for_shadow(k)) train_jobs.push_back(j);
  for (const FeatureJob& j : jobs_for_shadow(plan.validation_index()))
    valid_jobs.push_back(j);

  MembershipDataset ds;
  ds.train = run_feature_jobs(models, corpora, train_jobs, exec);
  ds.validation = run_feature_jobs(models, corpora, valid_jobs, exec);
  Rng rng(derive_seed(seed, "balance"));
  balance_exact(ds.train, rng);
  balance_exact(ds.validation, rng);
  return ds;
}

// ------------------------------------------------------------ attack model --

namespace {

double example_accuracy(const AttackModel& attack,
                        const std::vector<MembershipExample>& examples) {
  if (examples.empty()) return 0.0;
  size_t correct = 0;
  for (const MembershipExample& e : examples) {
    const bool said_member = attack_membership_prob(attack, e.feature) > 0.5;
    correct += said_member == (e.label == 1);
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

}  // namespace

AttackModel train_attack_model(const std::vector<MembershipExample>& train,
                               const std::vector<MembershipExample>& validation,
                               const AttackTrainConfig& cfg) {
  if (train.empty()) throw std::invalid_argument("empty attack training set");
  bool has_pos = false, has_neg = false;
  for (const MembershipExample& e : train) (e.label == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw std::invalid_argument("degenerate single-class input");
  const size_t dim = train[0].feature.size();
  for (const MembershipExample& e : train)
    if (e.feature.size() != dim)
      throw std::invalid_argument("inconsistent feature width");

  Rng rng(cfg.seed);
  AttackModel attack;
  attack.net = FfnParams::init({dim, cfg.hidden, 2},
                               {Activation::Relu, Activation::Identity}, rng);
  FfnGrads grads = FfnGrads::zero(attack.net);
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  FfnTrace trace;
  for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t i : order) {
      const MembershipExample& e = train[i];
      const Vec logits = ffn_forward_cached(attack.net, e.feature, trace);
      Vec d_logits = softmax(logits);
      d_logits[e.label == 1 ? 1 : 0] -= 1.0;
      grads.clear();
      ffn_backward(attack.net, e.feature, trace, d_logits, grads);
      for (size_t l = 0; l < attack.net.layers.size(); ++l) {
        add_scaled(attack.net.layers[l].w.raw(), grads.w[l].raw(),
                   -cfg.learning_rate);
        add_scaled(attack.net.layers[l].b, grads.b[l], -cfg.learning_rate);
      }
    }
  }
  attack.train_accuracy = example_accuracy(attack, train);
  attack.validation_accuracy = example_accuracy(attack, validation);
  return attack;
}

double attack_membership_prob(const AttackModel& attack, const Vec& feature) {
  if (attack.net.layers.empty()) throw std::invalid_argument("untrained attack model");
  return ffn_softmax(attack.net, feature)[1];
}

// ------------------------------------------------------------- target MIA --

MiaReport mia_attack_target(const AttackModel& attack, const TaggerModel& target,
                            const std::vector<Corpus>& corpora,
                            const ShadowPlan& plan, const OrderedNames& dict,
                            size_t rank_reports, uint64_t seed, Exec exec,
                            ScoreAgg report_agg) {
  if (attack.net.layers.empty()) throw std::invalid_argument("untrained attack model");
  if (corpora.size() != plan.num_shadow)
    throw std::invalid_argument("corpora do not match the shadow plan");
  const Corpus& target_corpus = corpora[plan.target_index];
  const std::vector<size_t> train_reports = train_report_indices(target_corpus);
  if (train_reports.empty()) throw std::invalid_argument("no train reports");

  // member reports vs an equal-sized mix from the shadow corpora
  std::vector<std::pair<size_t, size_t>> jobs;  // (corpus, report)
  for (size_t r : train_reports) jobs.emplace_back(plan.target_index, r);
  {
    std::vector<std::pair<size_t, size_t>> pool;
    for (size_t j = 0; j < plan.num_shadow; ++j) {
      if (j == plan.target_index) continue;
      for (size_t r : train_reports) pool.emplace_back(j, r);
    }
    Rng rng(derive_seed(seed, "mia.mix"));
    rng.shuffle(pool);
    if (pool.size() < train_reports.size())
      throw std::invalid_argument("not enough shadow reports for the mix");
    for (size_t i = 0; i < train_reports.size(); ++i) jobs.push_back(pool[i]);
  }

  std::vector<std::vector<double>> probs(jobs.size());
  for_each_index(exec, jobs.size(), [&](size_t i) {
    const Report& rep = corpora[jobs[i].first].reports[jobs[i].second];
    for (const Vec& f : name_features(target, rep))
      probs[i].push_back(attack_membership_prob(attack, f));
  });

  MiaReport report;
  report.attack_train_accuracy = attack.train_accuracy;
  report.attack_validation_accuracy = attack.validation_accuracy;
  const size_t members = train_reports.size();
  size_t mem_examples = 0, mem_hits = 0, non_examples = 0, non_hits = 0;
  size_t report_hits = 0;
  for (size_t i = 0; i < jobs.size(); ++i) {
    const bool is_member = i < members;
    double pooled = 0.0;
    for (double p : probs[i]) {
      const bool said_member = p > 0.5;
      if (is_member) {
        ++mem_examples;
        mem_hits += said_member;
      } else {
        ++non_examples;
        non_hits += !said_member;
      }
      if (report_agg == ScoreAgg::Max)
        pooled = std::max(pooled, p);
      else
        pooled += p;
    }
    if (report_agg == ScoreAgg::Mean && !probs[i].empty())
      pooled /= static_cast<double>(probs[i].size());
    report_hits += (pooled > 0.5) == is_member;
  }
  if (mem_examples > 0 && non_examples > 0)
    report.target_example_accuracy =
        0.5 * (static_cast<double>(mem_hits) / static_cast<double>(mem_examples) +
               static_cast<double>(non_hits) / static_cast<double>(non_examples));
  report.target_report_accuracy =
      static_cast<double>(report_hits) / static_cast<double>(jobs.size());

  // rank the dictionary by attack probability for the heaviest reports
  std::vector<size_t> heavy = train_reports;
  std::sort(heavy.begin(), heavy.end(), [&](size_t a, size_t b) {
    const size_t ca = target_corpus.reports[a].surname_positions.size();
    const size_t cb = target_corpus.reports[b].surname_positions.size();
    if (ca != cb) return ca > cb;
    return a < b;
  });
  if (heavy.size() > rank_reports) heavy.resize(rank_reports);
  for (size_t r : heavy) {
    const Report& rep = target_corpus.reports[r];
    if (rep.surname_positions.empty()) continue;
    report.ranks.push_back(rank_candidates(
        rep, dict,
        [&](const BruteUnit& unit) {
          std::map<size_t, std::vector<Vec>> cache;
          std::vector<double> out;
          for (const TokenPos& pos : unit.positions) {
            auto it = cache.find(pos.sentence);
            if (it == cache.end())
              it = cache
                       .emplace(pos.sentence,
                                predict_p(target, unit.sentences[pos.sentence]))
                       .first;
            out.push_back(attack_membership_prob(attack, it->second[pos.token]));
          }
          return out;
        },
        exec));
    report.ranks.back().aggregation = "mean-membership-prob";
  }
  return report;
}

}  // namespace deid
