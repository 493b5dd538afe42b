#pragma once

#include "deid/corpus.hpp"
#include "deid/neural.hpp"
#include "deid/parallel.hpp"
#include "deid/perturb.hpp"
#include "deid/tagger.hpp"

#include <functional>
#include <string>
#include <vector>

namespace deid {

// ---------------------------------------------------------- naive cutoff --

struct CutoffResult {
  double threshold = 0.0;
  bool members_above = true;  // orientation: predict member when score >= threshold
  double balanced_accuracy = 0.0;
  size_t tp = 0, fn = 0, tn = 0, fp = 0;
};

// Best single-threshold membership rule over two score samples. Scans the
// midpoints between adjacent pooled values plus one threshold outside each
// end, in both orientations; the first threshold reaching the maximum
// balanced accuracy wins, so the result is deterministic. The optimum
// equals (1 + D)/2 for the two-sample KS statistic D.
CutoffResult naive_cutoff(const std::vector<double>& member_scores,
                          const std::vector<double>& nonmember_scores);

// ---------------------------------------------------------- rank attacks --

struct RankResult {
  std::string report_id;
  size_t candidate_count = 0;
  size_t true_index = 0;      // candidate index of the report's own surname
  size_t true_name_rank = 0;  // 1-based; ties count against the true name
  std::vector<size_t> per_occurrence_ranks;
  std::vector<double> candidate_scores;  // aggregated, candidate order
  std::string aggregation = "mean-score";
};

// Per-occurrence scores for one candidate substitution.
using UnitScorer = std::function<std::vector<double>(const BruteUnit&)>;

// Substitute every dictionary candidate into the report's surname slots
// (the true surname is appended when the dictionary lacks it), score each
// occurrence, aggregate by mean, and rank the true surname. Candidates are
// independent, so the scan runs serial or parallel identically.
RankResult rank_candidates(const Report&, const OrderedNames& dict,
                           const UnitScorer&, Exec exec);

// Candidate score = mean P[gold surname tag] over the report's surname
// slots under the given tagger. The re-identification question: does the
// model score the name it trained on above the rest of the dictionary?
RankResult brute_force_rank(const TaggerModel&, const Report&,
                            const OrderedNames& dict,
                            Exec exec = Exec::Parallel);

// ------------------------------------------------------------ shadow MIA --

// Index space of the shadow family: 0 is the target, the last shadow is
// held out to validate the attack model, everything between trains it.
struct ShadowPlan {
  size_t num_shadow = 12;
  std::vector<uint64_t> corpus_seeds;  // per shadow; [0] unused
  std::vector<uint64_t> train_seeds;
  size_t target_index = 0;

  size_t validation_index() const { return num_shadow - 1; }
  std::vector<size_t> attack_train_indices() const;  // 1 .. num_shadow-2
};

// Requires num_shadow >= 4 (target, two training shadows, validation).
ShadowPlan build_shadow_plan(size_t num_shadow, uint64_t seed);

// Shadow corpora: index 0 is the original, every other index renames all
// patient names from the outside dictionary under its own seed. Each
// shadow draws from its own slice of a pool when the pool is big enough
// (>= num_shadow * reports entries), otherwise shadows share the pool.
std::vector<Corpus> build_shadow_corpora(const Corpus&, const NameInventory&,
                                         const NameDict& outside,
                                         const ShadowPlan&);

// One tagger per shadow corpus, all under the same protocol, seeds from
// the plan. Shadows are independent, so they train in parallel.
std::vector<TaggerModel> train_shadow_models(const std::vector<Corpus>&,
                                             const EmbeddingTable&,
                                             const TaggerModelConfig&,
                                             const TrainConfig& protocol,
                                             const ShadowPlan&,
                                             Exec exec = Exec::Parallel);

struct MembershipExample {
  Vec feature;               // tagger softmax vector at a name token
  int label = 0;             // +1 member, -1 non-member
  size_t source_shadow = 0;  // model that produced the feature
};

struct MembershipDataset {
  std::vector<MembershipExample> train;       // shadows 1..S-2, balanced
  std::vector<MembershipExample> validation;  // shadow S-1, balanced
};

// Members: each training shadow scores its own train reports. Non-members:
// the same shadow scores an equal-sized seeded mix of train reports drawn
// without replacement from the other training shadows. Both pools are then
// balanced exactly by seeded downsampling of the majority class.
MembershipDataset build_membership_dataset(const std::vector<TaggerModel>&,
                                           const std::vector<Corpus>&,
                                           const ShadowPlan&, uint64_t seed,
                                           Exec exec = Exec::Parallel);

struct AttackModel {
  FfnParams net;  // feature dim -> hidden ReLU -> 2 softmax
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct AttackTrainConfig {
  size_t epochs = 100;
  double learning_rate = 0.01;
  size_t hidden = 64;
  uint64_t seed = 1;
};

// Plain SGD on cross-entropy, one example at a time in seeded-shuffled
// order, no dropout, no clipping. Throws on single-class input.
AttackModel train_attack_model(const std::vector<MembershipExample>& train,
                               const std::vector<MembershipExample>& validation,
                               const AttackTrainConfig&);

// P(member) under the attack model.
double attack_membership_prob(const AttackModel&, const Vec& feature);

// How a report's member probability is pooled from its tokens.
enum class ScoreAgg { Mean, Max };

struct MiaReport {
  double attack_train_accuracy = 0.0;
  double attack_validation_accuracy = 0.0;
  // balanced accuracy over name tokens: target train reports vs an
  // equal-sized mix of shadow reports, scored by the target model
  double target_example_accuracy = 0.0;
  // per-report decision: aggregated membership probability > 1/2
  double target_report_accuracy = 0.0;
  std::vector<RankResult> ranks;  // attack-prob ranking of heavy reports
};

// Point the trained attack at a target model. Ranks cover the
// `rank_reports` target train reports with the most surname mentions,
// each candidate scored by its mean membership probability.
MiaReport mia_attack_target(const AttackModel&, const TaggerModel& target,
                            const std::vector<Corpus>&, const ShadowPlan&,
                            const OrderedNames& dict, size_t rank_reports,
                            uint64_t seed, Exec exec = Exec::Parallel,
                            ScoreAgg report_agg = ScoreAgg::Mean);

}  // namespace deid
