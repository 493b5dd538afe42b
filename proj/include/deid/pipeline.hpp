#pragma once

#include "deid/attacks.hpp"
#include "deid/corpus.hpp"
#include "deid/embeddings.hpp"
#include "deid/parallel.hpp"
#include "deid/perturb.hpp"
#include "deid/stats.hpp"
#include "deid/tagger.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace deid {

// Bad configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A stage failed mid-run; the CLI maps this to exit code 3.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error(stage_name + ": " + what), stage(std::move(stage_name)) {}
};

enum class Stage {
  GenCorpus,
  Train,
  Perturb,
  Extract,
  Ks,
  Cutoff,
  Brute,
  Mia,
  Report
};

std::string_view stage_name(Stage);            // "gen-corpus", "train", ...
Stage stage_from_name(std::string_view);       // throws ConfigError on unknown
const std::vector<Stage>& all_stages();        // canonical order

enum class CrfMode { Off, On, Both };

// Flat key = value run configuration. Defaults mirror the audited
// training protocol; every value can be overridden in the file or by
// CLI flags.
struct RunConfig {
  // inputs; an empty path means "synthesize this artifact"
  std::string corpus_path;
  std::string surname_dict_path;
  std::string given_male_dict_path;
  std::string given_female_dict_path;
  std::string embedding_path;
  std::string out_dir = "out";

  SynthConfig synth;  // corpus generator settings (when corpus_path empty)
  size_t dict_surnames = 1200;  // synthesized dictionary sizes
  size_t dict_given_male = 300;
  size_t dict_given_female = 300;
  size_t embedding_dim = 100;

  size_t char_dim = 25;
  size_t char_hidden = 25;
  bool char_bidirectional = true;
  size_t token_hidden = 100;
  CrfMode crf = CrfMode::Both;

  double learning_rate = 0.01;
  double dropout = 0.5;
  size_t epochs_crf = 95;
  size_t epochs_nocrf = 88;
  double gradient_clip = 5.0;
  size_t overfit_dial = 0;  // 0 = off, else keep only the first N train reports

  size_t shadow_count = 12;
  size_t shadow_epochs = 30;
  bool attack_crf = false;      // protocol of the attacked / shadow taggers
  size_t brute_dict_size = 0;   // 0 = the whole surname dictionary
  size_t repetition_min = 6;
  size_t rank_reports = 3;
  size_t attack_epochs = 100;
  ScoreAgg attack_agg = ScoreAgg::Mean;

  uint64_t seed = 1;
};

RunConfig parse_run_config(std::istream&);
RunConfig load_run_config(const std::string& path);
// Referenced paths must exist; ratios, counts and modes must be sane.
void validate_run_config(const RunConfig&);

// Keep only the first `n` train reports (the overfit dial); 0 = identity.
Corpus apply_overfit_dial(const Corpus&, size_t n);

struct StageStatus {
  Stage stage = Stage::Report;
  bool ran = false;  // false = outputs were already present
  std::string note;
};

struct PipelineResult {
  std::vector<StageStatus> stages;
};

// Execute the requested stages in canonical order. When several stages
// run together (the `all` path), a stage whose outputs already exist is
// skipped, so interrupted runs resume; a single explicitly requested
// stage always re-runs.
PipelineResult run_pipeline(const RunConfig&, const std::vector<Stage>&,
                            Exec exec = Exec::Parallel);

}  // namespace deid
