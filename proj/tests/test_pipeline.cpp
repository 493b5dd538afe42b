#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "deid/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace deid;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("deid_pipe_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// small enough to run the whole pipeline in seconds
std::string tiny_config(const fs::path& out) {
  std::ostringstream cfg;
  cfg << "out = " << out.string() << "\n"
      << "seed = 5\n"
      << "synth.reports = 24\n"
      << "synth.mentions = 3\n"
      << "synth.quota = 3\n"
      << "dict.surnames = 100\n"
      << "dict.given_male = 40\n"
      << "dict.given_female = 40\n"
      << "embedding.dim = 24\n"
      << "model.char_dim = 8\n"
      << "model.char_hidden = 8\n"
      << "model.token_hidden = 16\n"
      << "crf = both\n"
      << "train.learning_rate = 0.05\n"
      << "train.epochs_crf = 3\n"
      << "train.epochs_nocrf = 3\n"
      << "attack.shadows = 4\n"
      << "attack.shadow_epochs = 2\n"
      << "attack.epochs = 30\n"
      << "attack.brute_dict = 60\n"
      << "attack.rank_reports = 2\n"
      << "attack.repetition_min = 3\n";
  return cfg.str();
}

RunConfig tiny_run_config(const fs::path& out) {
  std::istringstream in(tiny_config(out));
  return parse_run_config(in);
}

// every file under the bundle with its bytes, manifest excluded
std::map<std::string, std::string> bundle_snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const std::string rel = fs::relative(entry.path(), root).string();
    if (rel == "manifest.json") continue;
    std::ifstream in(entry.path(), std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    out[rel] = buf.str();
  }
  return out;
}

}  // namespace

TEST_CASE("stage names round trip in canonical order") {
  const std::vector<std::string> expected = {
      "gen-corpus", "train", "perturb", "extract", "ks",
      "cutoff",     "brute", "mia",     "report"};
  const std::vector<Stage>& order = all_stages();
  REQUIRE(order.size() == expected.size());
  for (size_t i = 0; i < order.size(); ++i) {
    CHECK(stage_name(order[i]) == expected[i]);
    CHECK(stage_from_name(expected[i]) == order[i]);
  }
  CHECK_THROWS_AS(stage_from_name("polish"), ConfigError);
}

TEST_CASE("config parsing applies defaults, values, and comments") {
  std::istringstream empty("");
  const RunConfig def = parse_run_config(empty);
  CHECK(def.out_dir == "out");
  CHECK(def.seed == 1);
  CHECK(def.embedding_dim == 100);
  CHECK(def.char_dim == 25);
  CHECK(def.token_hidden == 100);
  CHECK(def.crf == CrfMode::Both);
  CHECK(def.learning_rate == 0.01);
  CHECK(def.dropout == 0.5);
  CHECK(def.epochs_crf == 95);
  CHECK(def.epochs_nocrf == 88);
  CHECK(def.gradient_clip == 5.0);
  CHECK(def.shadow_count == 12);
  CHECK(def.repetition_min == 6);
  CHECK(def.attack_agg == ScoreAgg::Mean);

  std::istringstream full(
      "# run settings\n"
      "\n"
      "seed = 99\n"
      "out = /tmp/somewhere\n"
      "crf = off\n"
      "train.dropout = 0.25\n"
      "train.overfit_dial = 5\n"
      "attack.crf = on\n"
      "attack.aggregation = max\n"
      "synth.train_ratio = 0.7\n");
  const RunConfig cfg = parse_run_config(full);
  CHECK(cfg.seed == 99);
  CHECK(cfg.out_dir == "/tmp/somewhere");
  CHECK(cfg.crf == CrfMode::Off);
  CHECK(cfg.dropout == 0.25);
  CHECK(cfg.overfit_dial == 5);
  CHECK(cfg.attack_crf == true);
  CHECK(cfg.attack_agg == ScoreAgg::Max);
  CHECK(cfg.synth.train_ratio == 0.7);
}

TEST_CASE("config errors carry the offending line") {
  std::istringstream unknown("seed = 1\nnonsense.key = 2\n");
  CHECK_THROWS_WITH_AS(parse_run_config(unknown),
                       doctest::Contains("line 2"), ConfigError);

  std::istringstream bad_number("train.epochs_crf = soon\n");
  CHECK_THROWS_AS(parse_run_config(bad_number), ConfigError);

  std::istringstream bad_mode("crf = maybe\n");
  CHECK_THROWS_AS(parse_run_config(bad_mode), ConfigError);

  std::istringstream no_equals("seed 5\n");
  CHECK_THROWS_AS(parse_run_config(no_equals), ConfigError);

  std::istringstream bad_agg("attack.aggregation = median\n");
  CHECK_THROWS_AS(parse_run_config(bad_agg), ConfigError);
}

TEST_CASE("validation rejects inconsistent configurations") {
  const fs::path out = fresh_dir("validate");
  RunConfig ok = tiny_run_config(out);
  CHECK_NOTHROW(validate_run_config(ok));

  RunConfig missing = ok;
  missing.corpus_path = (out / "no_such.conll").string();
  CHECK_THROWS_AS(validate_run_config(missing), ConfigError);

  const fs::path lone_dict = out / "surnames.txt";
  std::ofstream(lone_dict) << "abbot\nbaker\n";
  RunConfig partial = ok;
  partial.surname_dict_path = lone_dict.string();  // exists, but alone
  CHECK_THROWS_AS(validate_run_config(partial), ConfigError);

  RunConfig few_shadows = ok;
  few_shadows.shadow_count = 3;
  CHECK_THROWS_AS(validate_run_config(few_shadows), ConfigError);

  RunConfig crf_clash = ok;
  crf_clash.crf = CrfMode::Off;
  crf_clash.attack_crf = true;
  CHECK_THROWS_AS(validate_run_config(crf_clash), ConfigError);

  RunConfig bad_ratio = ok;
  bad_ratio.synth.train_ratio = 0.9;
  bad_ratio.synth.valid_ratio = 0.9;
  CHECK_THROWS_AS(validate_run_config(bad_ratio), ConfigError);

  RunConfig small_dict = ok;
  small_dict.dict_surnames = ok.synth.n_reports + 2;
  CHECK_THROWS_AS(validate_run_config(small_dict), ConfigError);

  RunConfig no_ranks = ok;
  no_ranks.rank_reports = 0;
  CHECK_THROWS_AS(validate_run_config(no_ranks), ConfigError);
}

TEST_CASE("load_run_config reads a file and reports missing ones") {
  const fs::path dir = fresh_dir("loadcfg");
  const fs::path path = dir / "run.cfg";
  std::ofstream(path) << "seed = 123\n";
  CHECK(load_run_config(path.string()).seed == 123);
  CHECK_THROWS_AS(load_run_config((dir / "absent.cfg").string()), ConfigError);
}

TEST_CASE("overfit dial keeps a train prefix and everything else") {
  const fs::path out = fresh_dir("dial");
  RunConfig cfg = tiny_run_config(out);
  NameDict dict = synth_name_dictionary(60, 30, 30, 3);
  SynthConfig sc;
  sc.n_reports = 12;
  sc.seed = 3;
  const Corpus corpus = generate_synthetic_corpus(sc, dict).corpus;

  const Corpus dialed = apply_overfit_dial(corpus, 2);
  size_t train = 0, other = 0, total_other = 0;
  for (const Report& r : dialed.reports)
    (r.split == Split::Train ? train : other) += 1;
  for (const Report& r : corpus.reports)
    if (r.split != Split::Train) total_other += 1;
  CHECK(train == 2);
  CHECK(other == total_other);

  // identity at 0 and when n exceeds the train count
  CHECK(apply_overfit_dial(corpus, 0).reports.size() == corpus.reports.size());
  CHECK(apply_overfit_dial(corpus, 10000).reports.size() ==
        corpus.reports.size());

  // order of the surviving reports is unchanged
  std::vector<std::string> kept;
  for (const Report& r : dialed.reports) kept.push_back(r.id);
  std::vector<std::string> expect;
  size_t taken = 0;
  for (const Report& r : corpus.reports) {
    if (r.split == Split::Train) {
      if (taken == 2) continue;
      ++taken;
    }
    expect.push_back(r.id);
  }
  CHECK(kept == expect);
}

TEST_CASE("the full pipeline writes every stage artifact") {
  const fs::path out = fresh_dir("full");
  const RunConfig cfg = tiny_run_config(out);
  validate_run_config(cfg);
  const PipelineResult res = run_pipeline(cfg, all_stages(), Exec::Serial);
  REQUIRE(res.stages.size() == all_stages().size());
  for (const StageStatus& st : res.stages) CHECK(st.ran);

  for (const char* rel :
       {"corpus.conll", "dicts/surnames.txt", "embedding.vec",
        "corpus_stats.json", "model_nocrf.json", "model_crf.json",
        "history_nocrf.csv", "metrics.json", "variants/SN1.conll",
        "variants/SNGN2.plan", "probs/nocrf_ORIG.csv", "probs/crf_SN2.csv",
        "ks_full.csv", "ks_table.csv", "summary_stats.csv",
        "curves/hist_nocrf_ORIG.csv", "curves/ecdf_crf_SN1.csv",
        "curves/kde_nocrf_SNGN1.csv", "cutoff_results.csv",
        "brute/brute_summary.json", "mia_report.json", "manifest.json"}) {
    INFO(std::string(rel));
    CHECK(fs::exists(out / rel));
  }
}

TEST_CASE("same config and seed reproduce the bundle bit for bit") {
  const fs::path out_a = fresh_dir("rep_a");
  const fs::path out_b = fresh_dir("rep_b");
  RunConfig cfg_a = tiny_run_config(out_a);
  RunConfig cfg_b = tiny_run_config(out_b);
  run_pipeline(cfg_a, all_stages(), Exec::Serial);
  run_pipeline(cfg_b, all_stages(), Exec::Serial);

  const auto snap_a = bundle_snapshot(out_a);
  const auto snap_b = bundle_snapshot(out_b);
  REQUIRE_FALSE(snap_a.empty());
  REQUIRE(snap_a.size() == snap_b.size());
  for (const auto& [rel, bytes] : snap_a) {
    INFO(rel);
    const auto it = snap_b.find(rel);
    REQUIRE(it != snap_b.end());
    CHECK(bytes == it->second);
  }

  // a different seed changes the corpus
  const fs::path out_c = fresh_dir("rep_c");
  RunConfig cfg_c = tiny_run_config(out_c);
  cfg_c.seed = 6;
  run_pipeline(cfg_c, {Stage::GenCorpus}, Exec::Serial);
  std::ifstream a(out_a / "corpus.conll"), c(out_c / "corpus.conll");
  std::ostringstream sa, sc;
  sa << a.rdbuf();
  sc << c.rdbuf();
  CHECK(sa.str() != sc.str());
}

TEST_CASE("joint runs resume over finished stages, single stages re-run") {
  const fs::path out = fresh_dir("resume");
  const RunConfig cfg = tiny_run_config(out);
  run_pipeline(cfg, all_stages(), Exec::Serial);

  // everything present: the joint run only refreshes the report
  const PipelineResult again = run_pipeline(cfg, all_stages(), Exec::Serial);
  for (const StageStatus& st : again.stages) {
    if (st.stage == Stage::Report)
      CHECK(st.ran);
    else
      CHECK_FALSE(st.ran);
  }

  // a deleted artifact pulls its stage back in
  fs::remove(out / "ks_table.csv");
  const PipelineResult healed = run_pipeline(cfg, all_stages(), Exec::Serial);
  for (const StageStatus& st : healed.stages) {
    if (st.stage == Stage::Ks || st.stage == Stage::Report)
      CHECK(st.ran);
    else
      CHECK_FALSE(st.ran);
  }
  CHECK(fs::exists(out / "ks_table.csv"));

  // an explicitly requested stage runs even though its outputs exist
  const PipelineResult single = run_pipeline(cfg, {Stage::Ks}, Exec::Serial);
  REQUIRE(single.stages.size() == 1);
  CHECK(single.stages[0].ran);
}

TEST_CASE("a stage with missing inputs fails as a stage error") {
  const fs::path out = fresh_dir("missing");
  const RunConfig cfg = tiny_run_config(out);
  CHECK_THROWS_AS(run_pipeline(cfg, {Stage::Extract}, Exec::Serial), StageError);
  try {
    run_pipeline(cfg, {Stage::Ks}, Exec::Serial);
    FAIL("expected a stage error");
  } catch (const StageError& e) {
    CHECK(e.stage == "ks");
    CHECK(std::string(e.what()).find("run") != std::string::npos);
  }
}
