#include "deid/pipeline.hpp"

#include "deid/rng.hpp"
#include "deid/textio.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;

namespace deid {

namespace {

constexpr std::string_view kStageNames[] = {
    "gen-corpus", "train", "perturb", "extract", "ks",
    "cutoff",     "brute", "mia",     "report"};

}  // namespace

std::string_view stage_name(Stage s) { return kStageNames[static_cast<size_t>(s)]; }

Stage stage_from_name(std::string_view name) {
  for (size_t i = 0; i < std::size(kStageNames); ++i)
    if (kStageNames[i] == name) return static_cast<Stage>(i);
  throw ConfigError("unknown stage: " + std::string(name));
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = {
      Stage::GenCorpus, Stage::Train, Stage::Perturb, Stage::Extract, Stage::Ks,
      Stage::Cutoff,    Stage::Brute, Stage::Mia,     Stage::Report};
  return stages;
}

// ---------------------------------------------------------------- config --

namespace {

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

uint64_t parse_count(const std::string& value, const std::string& key) {
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected a non-negative integer, got '" +
                      value + "'");
  }
}

double parse_real(const std::string& value, const std::string& key) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("key " + key + ": expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true") return true;
  if (value == "false") return false;
  throw ConfigError("key " + key + ": expected true or false, got '" + value + "'");
}

CrfMode parse_crf_mode(const std::string& value, const std::string& key) {
  if (value == "on") return CrfMode::On;
  if (value == "off") return CrfMode::Off;
  if (value == "both") return CrfMode::Both;
  throw ConfigError("key " + key + ": expected on, off or both, got '" + value + "'");
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "corpus") cfg.corpus_path = value;
  else if (key == "surnames") cfg.surname_dict_path = value;
  else if (key == "given_male") cfg.given_male_dict_path = value;
  else if (key == "given_female") cfg.given_female_dict_path = value;
  else if (key == "embedding") cfg.embedding_path = value;
  else if (key == "out") cfg.out_dir = value;
  else if (key == "seed") cfg.seed = parse_count(value, key);
  else if (key == "synth.reports") cfg.synth.n_reports = parse_count(value, key);
  else if (key == "synth.mentions") cfg.synth.names_per_report = parse_count(value, key);
  else if (key == "synth.quota") cfg.synth.min_repetition_quota = parse_count(value, key);
  else if (key == "synth.train_ratio") cfg.synth.train_ratio = parse_real(value, key);
  else if (key == "synth.valid_ratio") cfg.synth.valid_ratio = parse_real(value, key);
  else if (key == "synth.test_ratio") cfg.synth.test_ratio = parse_real(value, key);
  else if (key == "synth.templates") cfg.synth.template_count = parse_count(value, key);
  else if (key == "dict.surnames") cfg.dict_surnames = parse_count(value, key);
  else if (key == "dict.given_male") cfg.dict_given_male = parse_count(value, key);
  else if (key == "dict.given_female") cfg.dict_given_female = parse_count(value, key);
  else if (key == "embedding.dim") cfg.embedding_dim = parse_count(value, key);
  else if (key == "model.char_dim") cfg.char_dim = parse_count(value, key);
  else if (key == "model.char_hidden") cfg.char_hidden = parse_count(value, key);
  else if (key == "model.char_bidirectional")
    cfg.char_bidirectional = parse_bool(value, key);
  else if (key == "model.token_hidden") cfg.token_hidden = parse_count(value, key);
  else if (key == "crf") cfg.crf = parse_crf_mode(value, key);
  else if (key == "train.learning_rate") cfg.learning_rate = parse_real(value, key);
  else if (key == "train.dropout") cfg.dropout = parse_real(value, key);
  else if (key == "train.epochs_crf") cfg.epochs_crf = parse_count(value, key);
  else if (key == "train.epochs_nocrf") cfg.epochs_nocrf = parse_count(value, key);
  else if (key == "train.clip") cfg.gradient_clip = parse_real(value, key);
  else if (key == "train.overfit_dial") cfg.overfit_dial = parse_count(value, key);
  else if (key == "attack.shadows") cfg.shadow_count = parse_count(value, key);
  else if (key == "attack.shadow_epochs") cfg.shadow_epochs = parse_count(value, key);
  else if (key == "attack.crf") {
    if (value == "on") cfg.attack_crf = true;
    else if (value == "off") cfg.attack_crf = false;
    else throw ConfigError("key attack.crf: expected on or off, got '" + value + "'");
  } else if (key == "attack.brute_dict") cfg.brute_dict_size = parse_count(value, key);
  else if (key == "attack.repetition_min") cfg.repetition_min = parse_count(value, key);
  else if (key == "attack.rank_reports") cfg.rank_reports = parse_count(value, key);
  else if (key == "attack.epochs") cfg.attack_epochs = parse_count(value, key);
  else if (key == "attack.aggregation") {
    if (value == "mean") cfg.attack_agg = ScoreAgg::Mean;
    else if (value == "max") cfg.attack_agg = ScoreAgg::Max;
    else
      throw ConfigError("key attack.aggregation: expected mean or max, got '" +
                        value + "'");
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

}  // namespace

RunConfig parse_run_config(std::istream& in) {
  RunConfig cfg;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    try {
      apply_key(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_run_config(in);
}

void validate_run_config(const RunConfig& cfg) {
  for (const std::string* p :
       {&cfg.corpus_path, &cfg.surname_dict_path, &cfg.given_male_dict_path,
        &cfg.given_female_dict_path, &cfg.embedding_path}) {
    if (!p->empty() && !fs::exists(*p)) throw ConfigError("missing file: " + *p);
  }
  const bool any_dict = !cfg.surname_dict_path.empty() ||
                        !cfg.given_male_dict_path.empty() ||
                        !cfg.given_female_dict_path.empty();
  const bool all_dict = !cfg.surname_dict_path.empty() &&
                        !cfg.given_male_dict_path.empty() &&
                        !cfg.given_female_dict_path.empty();
  if (any_dict && !all_dict)
    throw ConfigError("dictionary paths must be given for all three name lists");
  try {
    cfg.synth.validate();
    TrainConfig t;
    t.learning_rate = cfg.learning_rate;
    t.dropout_rate = cfg.dropout;
    t.gradient_clip = cfg.gradient_clip;
    t.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (cfg.corpus_path.empty() && !any_dict &&
      cfg.dict_surnames < cfg.synth.n_reports + 8)
    throw ConfigError("dict.surnames too small for synth.reports (needs " +
                      std::to_string(cfg.synth.n_reports + 8) + ")");
  if (cfg.embedding_dim == 0) throw ConfigError("embedding.dim must be positive");
  if (cfg.shadow_count < 4)
    throw ConfigError("attack.shadows must be at least 4");
  if (cfg.attack_crf && cfg.crf == CrfMode::Off)
    throw ConfigError("attack.crf = on needs crf = on or both");
  if (!cfg.attack_crf && cfg.crf == CrfMode::On)
    throw ConfigError("attack.crf = off needs crf = off or both");
  if (cfg.rank_reports == 0) throw ConfigError("attack.rank_reports must be positive");
}

Corpus apply_overfit_dial(const Corpus& corpus, size_t n) {
  if (n == 0) return corpus;
  Corpus out;
  out.tagset = corpus.tagset;
  size_t kept = 0;
  for (const Report& rep : corpus.reports) {
    if (rep.split == Split::Train && kept >= n) continue;
    if (rep.split == Split::Train) ++kept;
    out.reports.push_back(rep);
  }
  return out;
}

// ---------------------------------------------------------------- stages --

namespace {

struct Ctx {
  const RunConfig& cfg;
  Exec exec;
  fs::path out;

  fs::path p(const std::string& rel) const { return out / rel; }
};

std::ifstream open_in(const fs::path& path, const std::string& hint) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("missing " + path.string() + " (" + hint + ")");
  return f;
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  return f;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  auto f = open_out(path);
  f << j.dump(2) << '\n';
}

std::vector<std::pair<std::string, bool>> active_models(CrfMode mode) {
  std::vector<std::pair<std::string, bool>> v;
  if (mode != CrfMode::On) v.emplace_back("nocrf", false);
  if (mode != CrfMode::Off) v.emplace_back("crf", true);
  return v;
}

std::vector<VariantKind> variants_with_orig() {
  std::vector<VariantKind> v = {VariantKind::Orig};
  v.insert(v.end(), all_variants().begin(), all_variants().end());
  return v;
}

Corpus load_corpus_file(const Ctx& ctx) {
  auto in = open_in(ctx.p("corpus.conll"), "run gen-corpus first");
  return parse_conll(in, TagSet::standard()).corpus;
}

Corpus load_variant_file(const Ctx& ctx, VariantKind kind) {
  const std::string name = std::string(variant_name(kind));
  auto in = open_in(ctx.p("variants/" + name + ".conll"), "run perturb first");
  return parse_conll(in, TagSet::standard()).corpus;
}

NameDict load_dict_files(const Ctx& ctx) {
  NameDict d;
  auto s = open_in(ctx.p("dicts/surnames.txt"), "run gen-corpus first");
  d.surnames = load_name_list(s);
  auto m = open_in(ctx.p("dicts/given_male.txt"), "run gen-corpus first");
  d.given_male = load_name_list(m);
  auto f = open_in(ctx.p("dicts/given_female.txt"), "run gen-corpus first");
  d.given_female = load_name_list(f);
  return d;
}

EmbeddingTable load_embedding_file(const Ctx& ctx) {
  auto in = open_in(ctx.p("embedding.vec"), "run gen-corpus first");
  return load_word_vectors(in, ctx.cfg.embedding_dim);
}

OrderedNames brute_dictionary(const Ctx& ctx) {
  auto in = open_in(ctx.p("dicts/surnames.txt"), "run gen-corpus first");
  OrderedNames full = load_name_list(in);
  if (ctx.cfg.brute_dict_size == 0 || ctx.cfg.brute_dict_size >= full.size())
    return full;
  OrderedNames cut;
  for (size_t i = 0; i < ctx.cfg.brute_dict_size; ++i) cut.add(full[i]);
  return cut;
}

TaggerModelConfig model_config(const RunConfig& cfg, bool use_crf) {
  TaggerModelConfig m;
  m.char_dim = cfg.char_dim;
  m.char_hidden = cfg.char_hidden;
  m.char_bidirectional = cfg.char_bidirectional;
  m.token_hidden = cfg.token_hidden;
  m.use_crf = use_crf;
  return m;
}

// "6.0e-09" -> "6.0e-9", Table-style scientific notation
std::string format_sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1e", x);
  std::string s(buf);
  const size_t e = s.find('e');
  if (e == std::string::npos) return s;
  size_t digits = e + 2;  // skip the sign
  while (digits + 1 < s.size() && s[digits] == '0') s.erase(digits, 1);
  return s;
}

std::string display_p(double p) { return p < 1e-9 ? "<e-9" : format_sci(p); }

// ------------------------------------------------------------- gen-corpus --

void stage_gen_corpus(const Ctx& ctx) {
  const RunConfig& cfg = ctx.cfg;
  NameDict dict;
  if (!cfg.surname_dict_path.empty()) {
    auto s = open_in(cfg.surname_dict_path, "config key surnames");
    dict.surnames = load_name_list(s);
    auto m = open_in(cfg.given_male_dict_path, "config key given_male");
    dict.given_male = load_name_list(m);
    auto f = open_in(cfg.given_female_dict_path, "config key given_female");
    dict.given_female = load_name_list(f);
  } else {
    dict = synth_name_dictionary(cfg.dict_surnames, cfg.dict_given_male,
                                 cfg.dict_given_female, cfg.seed);
  }

  Corpus corpus;
  if (!cfg.corpus_path.empty()) {
    auto in = open_in(cfg.corpus_path, "config key corpus");
    corpus = parse_conll(in, TagSet::standard()).corpus;
  } else {
    SynthConfig sc = cfg.synth;
    sc.seed = derive_seed(cfg.seed, "corpus");
    corpus = generate_synthetic_corpus(sc, dict).corpus;
  }

  EmbeddingTable emb;
  if (!cfg.embedding_path.empty()) {
    auto in = open_in(cfg.embedding_path, "config key embedding");
    emb = load_word_vectors(in, cfg.embedding_dim);
  } else {
    // vocabulary = plain-text token types; name and other PHI tokens stay
    // out so they all share the unknown vector, like rare names under
    // pretrained vectors, and the name signal runs through the char channel
    std::set<std::string> vocab;
    for (const Report& rep : corpus.reports)
      for (const AnnotatedSentence& s : rep.sentences)
        for (size_t t = 0; t < s.tokens.size(); ++t)
          if (static_cast<size_t>(s.gold_tags[t]) == corpus.tagset.o_index)
            vocab.insert(to_lower(s.tokens[t].text));
    emb = synth_embedding({vocab.begin(), vocab.end()}, cfg.embedding_dim,
                          derive_seed(cfg.seed, "embedding"));
  }

  {
    auto f = open_out(ctx.p("corpus.conll"));
    emit_conll(corpus, f);
  }
  {
    auto f = open_out(ctx.p("dicts/surnames.txt"));
    write_name_list(f, dict.surnames);
  }
  {
    auto f = open_out(ctx.p("dicts/given_male.txt"));
    write_name_list(f, dict.given_male);
  }
  {
    auto f = open_out(ctx.p("dicts/given_female.txt"));
    write_name_list(f, dict.given_female);
  }
  {
    auto f = open_out(ctx.p("embedding.vec"));
    write_word_vectors(f, emb);
  }

  const NameInventory inv = build_name_inventory(corpus);
  size_t sentences = 0, tokens = 0, surname_occ = 0, given_occ = 0, six_plus = 0;
  std::map<std::string, size_t> split_counts;
  for (const Report& rep : corpus.reports) {
    sentences += rep.sentences.size();
    for (const AnnotatedSentence& s : rep.sentences) tokens += s.tokens.size();
    surname_occ += rep.surname_positions.size();
    given_occ += rep.given_positions.size();
    six_plus += rep.surname_positions.size() >= 6;
    ++split_counts[std::string(split_name(rep.split))];
  }
  nlohmann::json j;
  j["reports"] = corpus.reports.size();
  j["sentences"] = sentences;
  j["tokens"] = tokens;
  j["splits"] = split_counts;
  j["surname_occurrences"] = surname_occ;
  j["given_occurrences"] = given_occ;
  j["distinct_surnames"] = inv.surnames.size();
  j["distinct_givens"] = inv.givens.size();
  j["reports_with_six_plus_surnames"] = six_plus;
  j["tagset"] = corpus.tagset.labels;
  write_json(ctx.p("corpus_stats.json"), j);
}

// ------------------------------------------------------------------ train --

nlohmann::json metrics_json(const Metrics& m) {
  auto one = [](const ClassMetrics& c) {
    return nlohmann::json{{"tp", c.tp},
                          {"fp", c.fp},
                          {"fn", c.fn},
                          {"precision", c.precision},
                          {"recall", c.recall},
                          {"f1", c.f1},
                          {"precision_defined", c.precision_defined},
                          {"recall_defined", c.recall_defined}};
  };
  nlohmann::json j;
  j["overall"] = one(m.overall);
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [label, c] : m.per_class) per[label] = one(c);
  j["per_class"] = per;
  return j;
}

void stage_train(const Ctx& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Corpus corpus =
      apply_overfit_dial(load_corpus_file(ctx), cfg.overfit_dial);
  const EmbeddingTable emb = load_embedding_file(ctx);
  nlohmann::json metrics;
  for (const auto& [mname, use_crf] : active_models(cfg.crf)) {
    TrainConfig tcfg;
    tcfg.learning_rate = cfg.learning_rate;
    tcfg.dropout_rate = cfg.dropout;
    tcfg.max_epochs = use_crf ? cfg.epochs_crf : cfg.epochs_nocrf;
    tcfg.gradient_clip = cfg.gradient_clip;
    tcfg.seed = derive_seed(cfg.seed, use_crf ? "train.crf" : "train.nocrf");
    const TrainOutcome out =
        train_tagger(corpus, emb, model_config(cfg, use_crf), tcfg);
    save_model(out.model, ctx.p("model_" + mname + ".json").string());
    {
      auto f = open_out(ctx.p("history_" + mname + ".csv"));
      f << "epoch,mean_loss,valid_f1\n";
      for (const EpochStats& e : out.history)
        f << e.epoch << ',' << format_double(e.mean_loss) << ','
          << format_double(e.valid_f1) << '\n';
    }
    nlohmann::json m;
    m["best_epoch"] = out.model.best_epoch;
    m["epochs"] = out.model.epochs_trained;
    m["train"] = metrics_json(evaluate(out.model, corpus, Split::Train, ctx.exec));
    m["valid"] = metrics_json(evaluate(out.model, corpus, Split::Valid, ctx.exec));
    m["test"] = metrics_json(evaluate(out.model, corpus, Split::Test, ctx.exec));
    metrics[mname] = std::move(m);
  }
  write_json(ctx.p("metrics.json"), metrics);
}

// ---------------------------------------------------------------- perturb --

void stage_perturb(const Ctx& ctx) {
  const Corpus corpus = load_corpus_file(ctx);
  const NameDict dict = load_dict_files(ctx);
  const NameInventory inv = build_name_inventory(corpus);
  const NameDict outside = make_outside_dict(dict, inv);
  for (VariantKind kind : all_variants()) {
    const std::string name = std::string(variant_name(kind));
    const VariantResult res = make_variant(
        corpus, kind, inv, outside, derive_seed(ctx.cfg.seed, "perturb." + name));
    {
      auto f = open_out(ctx.p("variants/" + name + ".conll"));
      emit_conll(res.corpus, f);
    }
    {
      auto f = open_out(ctx.p("variants/" + name + ".plan"));
      write_replacement_plan(f, res.plan);
    }
  }
}

// ---------------------------------------------------------------- extract --

void stage_extract(const Ctx& ctx) {
  const RunConfig& cfg = ctx.cfg;
  for (const auto& [mname, use_crf] : active_models(cfg.crf)) {
    const TaggerModel model =
        load_model(ctx.p("model_" + mname + ".json").string());
    for (VariantKind var : variants_with_orig()) {
      const Corpus base = var == VariantKind::Orig ? load_corpus_file(ctx)
                                                   : load_variant_file(ctx, var);
      const Corpus corpus = apply_overfit_dial(base, cfg.overfit_dial);
      std::vector<std::vector<TokenPos>> positions(corpus.reports.size());
      for (size_t r = 0; r < corpus.reports.size(); ++r)
        if (corpus.reports[r].split == Split::Train)
          positions[r] = corpus.reports[r].surname_positions;
      const auto records = extract_name_probs(model, corpus, positions,
                                              NameClass::Surname, var, ctx.exec);
      auto f = open_out(
          ctx.p("probs/" + mname + "_" + std::string(variant_name(var)) + ".csv"));
      write_prob_records_csv(f, records, model.tagset);
    }
  }
}

// --------------------------------------------------------------------- ks --

std::vector<double> load_scores(const Ctx& ctx, const std::string& mname,
                                VariantKind var) {
  auto in = open_in(
      ctx.p("probs/" + mname + "_" + std::string(variant_name(var)) + ".csv"),
      "run extract first");
  return read_prob_scores_csv(in);
}

void stage_ks(const Ctx& ctx) {
  const auto models = active_models(ctx.cfg.crf);
  std::map<std::string, std::map<VariantKind, std::vector<double>>> scores;
  for (const auto& [mname, use_crf] : models)
    for (VariantKind var : variants_with_orig())
      scores[mname][var] = load_scores(ctx, mname, var);

  {
    auto f = open_out(ctx.p("ks_full.csv"));
    f << "model,variant,n_orig,n_variant,d,p_asymptotic,p_exact\n";
    for (const auto& [mname, use_crf] : models) {
      const auto& orig = scores[mname][VariantKind::Orig];
      for (VariantKind var : all_variants()) {
        const KsResult r = ks_two_sample(orig, scores[mname][var]);
        f << mname << ',' << variant_name(var) << ',' << r.n1 << ',' << r.n2
          << ',' << format_double(r.d) << ',' << format_double(r.p_asymptotic)
          << ',' << (r.p_exact ? format_double(*r.p_exact) : std::string())
          << '\n';
      }
    }
  }
  {
    // Table 1 shape: SN rows against both models, D and p per cell
    const std::vector<std::pair<std::string, VariantKind>> rows = {
        {"SN1", VariantKind::SN1},
        {"SN2", VariantKind::SN2},
        {"SN1*", VariantKind::SNGN1},
        {"SN2*", VariantKind::SNGN2}};
    auto f = open_out(ctx.p("ks_table.csv"));
    f << "variant";
    for (const auto& [mname, use_crf] : models) f << ',' << mname << "_D," << mname << "_p";
    f << '\n';
    for (const auto& [label, var] : rows) {
      f << label;
      for (const auto& [mname, use_crf] : models) {
        const KsResult r =
            ks_two_sample(scores[mname][VariantKind::Orig], scores[mname][var]);
        f << ',' << format_sci(r.d) << ',' << display_p(r.p_asymptotic);
      }
      f << '\n';
    }
  }
  {
    auto f = open_out(ctx.p("summary_stats.csv"));
    f << "model,variant,n,mean,median,std,min,max\n";
    for (const auto& [mname, use_crf] : models) {
      for (VariantKind var : variants_with_orig()) {
        const SummaryStats s = summarize(scores[mname][var]);
        f << mname << ',' << variant_name(var) << ',' << s.n << ','
          << format_double(s.mean) << ',' << format_double(s.median) << ','
          << format_double(s.stddev) << ',' << format_double(s.min) << ','
          << format_double(s.max) << '\n';
      }
    }
  }
  for (const auto& [mname, use_crf] : models) {
    for (VariantKind var : variants_with_orig()) {
      const std::string suffix =
          mname + "_" + std::string(variant_name(var)) + ".csv";
      const auto& sample = scores[mname][var];
      {
        auto f = open_out(ctx.p("curves/hist_" + suffix));
        write_curve_csv(f, histogram_curve(sample, 20), "density");
      }
      {
        auto f = open_out(ctx.p("curves/ecdf_" + suffix));
        write_curve_csv(f, ecdf_curve(sample), "cdf");
      }
      {
        auto f = open_out(ctx.p("curves/kde_" + suffix));
        write_curve_csv(f, kde_curve(sample), "density");
      }
    }
  }
}

// ----------------------------------------------------------------- cutoff --

void stage_cutoff(const Ctx& ctx) {
  auto f = open_out(ctx.p("cutoff_results.csv"));
  f << "model,variant,threshold,members_above,balanced_accuracy,tp,fn,tn,fp\n";
  for (const auto& [mname, use_crf] : active_models(ctx.cfg.crf)) {
    const std::vector<double> orig = load_scores(ctx, mname, VariantKind::Orig);
    for (VariantKind var : all_variants()) {
      const CutoffResult r = naive_cutoff(orig, load_scores(ctx, mname, var));
      f << mname << ',' << variant_name(var) << ',' << format_double(r.threshold)
        << ',' << (r.members_above ? 1 : 0) << ','
        << format_double(r.balanced_accuracy) << ',' << r.tp << ',' << r.fn
        << ',' << r.tn << ',' << r.fp << '\n';
    }
  }
}

// ------------------------------------------------------------------ brute --

// worst rank within each tie group, matching the rank attack's tie rule
std::vector<size_t> table_ranks(const std::vector<double>& scores) {
  std::vector<size_t> order(scores.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::vector<size_t> ranks(scores.size());
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = j + 1;
    i = j + 1;
  }
  return ranks;
}

void write_rank_table(const Ctx& ctx, const std::string& rel,
                      const OrderedNames& dict, const std::string& true_name,
                      const RankResult& r) {
  // candidate list as ranked: the dictionary plus a possible appended true name
  std::vector<std::string> names = dict.items();
  if (r.candidate_count == dict.size() + 1) names.push_back(true_name);
  const std::vector<size_t> ranks = table_ranks(r.candidate_scores);
  std::vector<size_t> order(r.candidate_count);
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (r.candidate_scores[a] != r.candidate_scores[b])
      return r.candidate_scores[a] > r.candidate_scores[b];
    return a < b;
  });
  auto f = open_out(ctx.p(rel));
  f << "candidate,score,rank,is_true\n";
  for (size_t i : order)
    f << names[i] << ',' << format_double(r.candidate_scores[i]) << ','
      << ranks[i] << ',' << (i == r.true_index ? 1 : 0) << '\n';
}

nlohmann::json rank_json(const RankResult& r) {
  return nlohmann::json{{"report_id", r.report_id},
                        {"candidate_count", r.candidate_count},
                        {"true_name_rank", r.true_name_rank},
                        {"per_occurrence_ranks", r.per_occurrence_ranks},
                        {"aggregation", r.aggregation}};
}

void stage_brute(const Ctx& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Corpus corpus =
      apply_overfit_dial(load_corpus_file(ctx), cfg.overfit_dial);
  const std::string mname = cfg.attack_crf ? "crf" : "nocrf";
  const TaggerModel model = load_model(ctx.p("model_" + mname + ".json").string());
  const OrderedNames dict = brute_dictionary(ctx);
  const std::vector<size_t> picks =
      select_repetition_reports(corpus, cfg.repetition_min, cfg.rank_reports,
                                derive_seed(cfg.seed, "brute.select"));
  nlohmann::json reports = nlohmann::json::array();
  for (size_t idx : picks) {
    const Report& rep = corpus.reports[idx];
    const RankResult r = brute_force_rank(model, rep, dict, ctx.exec);
    const TokenPos first = rep.surname_positions.at(0);
    const std::string true_name =
        to_lower(rep.sentences[first.sentence].tokens[first.token].text);
    write_rank_table(ctx, "brute/rank_" + rep.id + ".csv", dict, true_name, r);
    nlohmann::json entry = rank_json(r);
    entry["occurrences"] = rep.surname_positions.size();
    reports.push_back(std::move(entry));
  }
  nlohmann::json j;
  j["model"] = mname;
  j["dict_size"] = dict.size();
  j["repetition_min"] = cfg.repetition_min;
  j["reports"] = std::move(reports);
  write_json(ctx.p("brute/brute_summary.json"), j);
}

// -------------------------------------------------------------------- mia --

void stage_mia(const Ctx& ctx) {
  const RunConfig& cfg = ctx.cfg;
  const Corpus corpus =
      apply_overfit_dial(load_corpus_file(ctx), cfg.overfit_dial);
  const NameDict dict = load_dict_files(ctx);
  const EmbeddingTable emb = load_embedding_file(ctx);
  const NameInventory inv = build_name_inventory(corpus);
  const NameDict outside = make_outside_dict(dict, inv);

  const ShadowPlan plan = build_shadow_plan(cfg.shadow_count, cfg.seed);
  const std::vector<Corpus> corpora =
      build_shadow_corpora(corpus, inv, outside, plan);
  TrainConfig protocol;
  protocol.learning_rate = cfg.learning_rate;
  protocol.dropout_rate = cfg.dropout;
  protocol.max_epochs = cfg.shadow_epochs;
  protocol.gradient_clip = cfg.gradient_clip;
  const std::vector<TaggerModel> models = train_shadow_models(
      corpora, emb, model_config(cfg, cfg.attack_crf), protocol, plan, ctx.exec);
  const MembershipDataset ds =
      build_membership_dataset(models, corpora, plan, cfg.seed, ctx.exec);
  AttackTrainConfig acfg;
  acfg.epochs = cfg.attack_epochs;
  acfg.seed = derive_seed(cfg.seed, "attack.train");
  const AttackModel attack = train_attack_model(ds.train, ds.validation, acfg);
  const OrderedNames rank_dict = brute_dictionary(ctx);
  const MiaReport mia = mia_attack_target(
      attack, models[plan.target_index], corpora, plan, rank_dict,
      cfg.rank_reports, cfg.seed, ctx.exec, cfg.attack_agg);

  nlohmann::json j;
  j["shadow_count"] = cfg.shadow_count;
  j["shadow_epochs"] = cfg.shadow_epochs;
  j["attack_epochs"] = cfg.attack_epochs;
  j["attack_crf"] = cfg.attack_crf;
  j["aggregation"] = cfg.attack_agg == ScoreAgg::Max ? "max" : "mean";
  j["dict_size"] = rank_dict.size();
  j["train_examples"] = ds.train.size();
  j["validation_examples"] = ds.validation.size();
  j["attack_train_accuracy"] = mia.attack_train_accuracy;
  j["attack_validation_accuracy"] = mia.attack_validation_accuracy;
  j["target_example_accuracy"] = mia.target_example_accuracy;
  j["target_report_accuracy"] = mia.target_report_accuracy;
  nlohmann::json ranks = nlohmann::json::array();
  for (const RankResult& r : mia.ranks) ranks.push_back(rank_json(r));
  j["ranks"] = std::move(ranks);
  nlohmann::json seeds;
  for (size_t k = 0; k < plan.num_shadow; ++k) {
    seeds["shadow.corpus." + std::to_string(k)] = plan.corpus_seeds[k];
    seeds["shadow.train." + std::to_string(k)] = plan.train_seeds[k];
  }
  seeds["attack.train"] = acfg.seed;
  seeds["mia.mix"] = derive_seed(cfg.seed, "mia.mix");
  j["seeds"] = std::move(seeds);
  write_json(ctx.p("mia_report.json"), j);
}

// ----------------------------------------------------------------- report --

std::vector<std::string> stage_outputs(const RunConfig& cfg, Stage s) {
  std::vector<std::string> out;
  const auto models = active_models(cfg.crf);
  switch (s) {
    case Stage::GenCorpus:
      out = {"corpus.conll",          "dicts/surnames.txt",
             "dicts/given_male.txt",  "dicts/given_female.txt",
             "embedding.vec",         "corpus_stats.json"};
      break;
    case Stage::Train:
      for (const auto& [m, crf] : models) {
        out.push_back("model_" + m + ".json");
        out.push_back("history_" + m + ".csv");
      }
      out.push_back("metrics.json");
      break;
    case Stage::Perturb:
      for (VariantKind kind : all_variants()) {
        out.push_back("variants/" + std::string(variant_name(kind)) + ".conll");
        out.push_back("variants/" + std::string(variant_name(kind)) + ".plan");
      }
      break;
    case Stage::Extract:
      for (const auto& [m, crf] : models)
        for (VariantKind var : variants_with_orig())
          out.push_back("probs/" + m + "_" + std::string(variant_name(var)) +
                        ".csv");
      break;
    case Stage::Ks:
      out = {"ks_table.csv", "ks_full.csv", "summary_stats.csv"};
      for (const auto& [m, crf] : models)
        for (VariantKind var : variants_with_orig())
          for (const char* kind : {"hist", "ecdf", "kde"})
            out.push_back("curves/" + std::string(kind) + "_" + m + "_" +
                          std::string(variant_name(var)) + ".csv");
      break;
    case Stage::Cutoff:
      out = {"cutoff_results.csv"};
      break;
    case Stage::Brute:
      out = {"brute/brute_summary.json"};
      break;
    case Stage::Mia:
      out = {"mia_report.json"};
      break;
    case Stage::Report:
      out = {"manifest.json"};
      break;
  }
  return out;
}

nlohmann::json config_echo(const RunConfig& cfg) {
  nlohmann::json j;
  j["corpus"] = cfg.corpus_path;
  j["surnames"] = cfg.surname_dict_path;
  j["given_male"] = cfg.given_male_dict_path;
  j["given_female"] = cfg.given_female_dict_path;
  j["embedding"] = cfg.embedding_path;
  j["out"] = cfg.out_dir;
  j["seed"] = cfg.seed;
  j["synth.reports"] = cfg.synth.n_reports;
  j["synth.mentions"] = cfg.synth.names_per_report;
  j["synth.quota"] = cfg.synth.min_repetition_quota;
  j["synth.train_ratio"] = cfg.synth.train_ratio;
  j["synth.valid_ratio"] = cfg.synth.valid_ratio;
  j["synth.test_ratio"] = cfg.synth.test_ratio;
  j["synth.templates"] = cfg.synth.template_count;
  j["dict.surnames"] = cfg.dict_surnames;
  j["dict.given_male"] = cfg.dict_given_male;
  j["dict.given_female"] = cfg.dict_given_female;
  j["embedding.dim"] = cfg.embedding_dim;
  j["model.char_dim"] = cfg.char_dim;
  j["model.char_hidden"] = cfg.char_hidden;
  j["model.char_bidirectional"] = cfg.char_bidirectional;
  j["model.token_hidden"] = cfg.token_hidden;
  j["crf"] = cfg.crf == CrfMode::Both ? "both" : (cfg.crf == CrfMode::On ? "on" : "off");
  j["train.learning_rate"] = cfg.learning_rate;
  j["train.dropout"] = cfg.dropout;
  j["train.epochs_crf"] = cfg.epochs_crf;
  j["train.epochs_nocrf"] = cfg.epochs_nocrf;
  j["train.clip"] = cfg.gradient_clip;
  j["train.overfit_dial"] = cfg.overfit_dial;
  j["attack.shadows"] = cfg.shadow_count;
  j["attack.shadow_epochs"] = cfg.shadow_epochs;
  j["attack.crf"] = cfg.attack_crf ? "on" : "off";
  j["attack.brute_dict"] = cfg.brute_dict_size;
  j["attack.repetition_min"] = cfg.repetition_min;
  j["attack.rank_reports"] = cfg.rank_reports;
  j["attack.epochs"] = cfg.attack_epochs;
  j["attack.aggregation"] = cfg.attack_agg == ScoreAgg::Max ? "max" : "mean";
  return j;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void stage_report(const Ctx& ctx) {
  const RunConfig& cfg = ctx.cfg;
  nlohmann::json j;
  {
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    j["generated_at"] = buf;  // the only timestamp in the bundle
  }
  const nlohmann::json echo = config_echo(cfg);
  j["config"] = echo;
  j["config_hash"] = hex64(fnv1a64(echo.dump()));
  j["master_seed"] = cfg.seed;
  {
    nlohmann::json seeds;
    for (const char* name : {"corpus", "embedding", "train.nocrf", "train.crf",
                             "brute.select", "attack.train", "mia.mix"})
      seeds[name] = derive_seed(cfg.seed, name);
    for (VariantKind kind : all_variants()) {
      const std::string name = "perturb." + std::string(variant_name(kind));
      seeds[name] = derive_seed(cfg.seed, name);
    }
    for (size_t k = 0; k < cfg.shadow_count; ++k) {
      seeds["shadow.corpus." + std::to_string(k)] =
          derive_seed(cfg.seed, "shadow.corpus." + std::to_string(k));
      seeds["shadow.train." + std::to_string(k)] =
          derive_seed(cfg.seed, "shadow.train." + std::to_string(k));
    }
    j["derived_seeds"] = std::move(seeds);
  }
  {
    nlohmann::json stages;
    for (Stage s : all_stages()) {
      if (s == Stage::Report) continue;
      std::string status = "complete";
      for (const std::string& rel : stage_outputs(cfg, s))
        if (!fs::exists(ctx.p(rel))) {
          status = "missing " + rel;
          break;
        }
      stages[std::string(stage_name(s))] = status;
    }
    j["stages"] = std::move(stages);
  }
  {
    std::vector<std::string> files;
    for (const auto& entry : fs::recursive_directory_iterator(ctx.out)) {
      if (!entry.is_regular_file()) continue;
      const std::string rel = fs::relative(entry.path(), ctx.out).generic_string();
      if (rel == "manifest.json") continue;
      files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    nlohmann::json arr = nlohmann::json::array();
    for (const std::string& rel : files) {
      std::ifstream f(ctx.p(rel), std::ios::binary);
      std::ostringstream body;
      body << f.rdbuf();
      const std::string content = body.str();
      arr.push_back({{"path", rel},
                     {"bytes", content.size()},
                     {"fnv1a64", hex64(fnv1a64(content))}});
    }
    j["files"] = std::move(arr);
  }
  write_json(ctx.p("manifest.json"), j);
}

void run_stage(const Ctx& ctx, Stage s) {
  switch (s) {
    case Stage::GenCorpus: stage_gen_corpus(ctx); break;
    case Stage::Train: stage_train(ctx); break;
    case Stage::Perturb: stage_perturb(ctx); break;
    case Stage::Extract: stage_extract(ctx); break;
    case Stage::Ks: stage_ks(ctx); break;
    case Stage::Cutoff: stage_cutoff(ctx); break;
    case Stage::Brute: stage_brute(ctx); break;
    case Stage::Mia: stage_mia(ctx); break;
    case Stage::Report: stage_report(ctx); break;
  }
}

bool outputs_exist(const Ctx& ctx, Stage s) {
  const auto outs = stage_outputs(ctx.cfg, s);
  for (const std::string& rel : outs)
    if (!fs::exists(ctx.p(rel))) return false;
  return !outs.empty();
}

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages,
                            Exec exec) {
  validate_run_config(cfg);
  Ctx ctx{cfg, exec, fs::path(cfg.out_dir)};
  fs::create_directories(ctx.out);
  std::vector<Stage> order;
  for (Stage s : all_stages())
    if (std::find(stages.begin(), stages.end(), s) != stages.end())
      order.push_back(s);
  if (order.empty()) throw ConfigError("no stages requested");
  const bool resume = order.size() > 1;
  PipelineResult result;
  for (Stage s : order) {
    StageStatus st;
    st.stage = s;
    if (resume && s != Stage::Report && outputs_exist(ctx, s)) {
      st.ran = false;
      st.note = "outputs present, skipped";
    } else {
      st.ran = true;
      st.note = "ran";
      try {
        run_stage(ctx, s);
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        throw StageError(std::string(stage_name(s)), e.what());
      }
    }
    result.stages.push_back(st);
  }
  return result;
}

}  // namespace deid
