#include "deid/tagger.hpp"

#include "deid/textio.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace deid {

size_t char_row(const std::vector<uint32_t>& vocab, uint32_t cp) {
  auto it = std::lower_bound(vocab.begin(), vocab.end(), cp);
  if (it == vocab.end() || *it != cp) return 0;
  return 1 + static_cast<size_t>(it - vocab.begin());
}

std::vector<uint32_t> build_char_vocab(const Corpus& corpus, Split split) {
  std::set<uint32_t> seen;
  for (const Report& rep : corpus.reports) {
    if (rep.split != split) continue;
    for (const AnnotatedSentence& s : rep.sentences)
      for (const Token& t : s.tokens)
        seen.insert(t.char_ids.begin(), t.char_ids.end());
  }
  return {seen.begin(), seen.end()};
}

EncodedSentence encode_sentence(const AnnotatedSentence& sent,
                                const EmbeddingTable& emb,
                                const std::vector<uint32_t>& char_vocab) {
  EncodedSentence out;
  out.gold = sent.gold_tags;
  out.tokens.reserve(sent.tokens.size());
  for (const Token& t : sent.tokens) {
    EncodedToken et;
    et.word_vec = embed_token(emb, t);
    if (et.word_vec.empty()) et.word_vec.assign(emb.dim, 0.0);
    et.char_rows.reserve(t.char_ids.size());
    for (uint32_t cp : t.char_ids) et.char_rows.push_back(char_row(char_vocab, cp));
    out.tokens.push_back(std::move(et));
  }
  return out;
}

std::vector<EncodedSentence> encode_split(const Corpus& corpus, Split split,
                                          const EmbeddingTable& emb,
                                          const std::vector<uint32_t>& char_vocab) {
  std::vector<EncodedSentence> out;
  for (const Report& rep : corpus.reports) {
    if (rep.split != split) continue;
    for (const AnnotatedSentence& s : rep.sentences)
      if (!s.tokens.empty()) out.push_back(encode_sentence(s, emb, char_vocab));
  }
  return out;
}

namespace {

std::vector<int> decode_encoded(const TaggerNet& net, const EncodedSentence& sent) {
  Mat em = tagger_emissions(net, sent);
  if (net.cfg.use_crf) return crf_viterbi(net.crf, em);
  std::vector<int> tags(em.rows());
  for (size_t t = 0; t < em.rows(); ++t) {
    int arg = 0;
    double best = em(t, 0);
    for (size_t k = 1; k < em.cols(); ++k)
      if (em(t, k) > best) {
        best = em(t, k);
        arg = static_cast<int>(k);
      }
    tags[t] = arg;
  }
  return tags;
}

void fill_rates(ClassMetrics& m) {
  m.precision_defined = m.tp + m.fp > 0;
  m.recall_defined = m.tp + m.fn > 0;
  m.precision = m.precision_defined
                    ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp)
                    : 0.0;
  m.recall = m.recall_defined
                 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn)
                 : 0.0;
  m.f1 = (m.precision + m.recall) > 0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
}

Metrics metrics_from_predictions(const TagSet& tagset,
                                 const std::vector<std::vector<int>>& gold,
                                 const std::vector<std::vector<int>>& pred) {
  Metrics m;
  for (size_t i = 0; i < tagset.labels.size(); ++i)
    if (i != tagset.o_index) m.per_class[tagset.labels[i]] = {};
  for (size_t s = 0; s < gold.size(); ++s) {
    for (size_t t = 0; t < gold[s].size(); ++t) {
      const int g = gold[s][t], p = pred[s][t];
      if (g == p) {
        if (static_cast<size_t>(g) != tagset.o_index)
          ++m.per_class[tagset.labels[g]].tp;
        continue;
      }
      if (static_cast<size_t>(p) != tagset.o_index)
        ++m.per_class[tagset.labels[p]].fp;
      if (static_cast<size_t>(g) != tagset.o_index)
        ++m.per_class[tagset.labels[g]].fn;
    }
  }
  for (auto& [label, cm] : m.per_class) {
    fill_rates(cm);
    m.overall.tp += cm.tp;
    m.overall.fp += cm.fp;
    m.overall.fn += cm.fn;
  }
  fill_rates(m.overall);
  return m;
}

double micro_f1_encoded(const TaggerNet& net, const TagSet& tagset,
                        const std::vector<EncodedSentence>& data) {
  std::vector<std::vector<int>> gold, pred;
  gold.reserve(data.size());
  pred.reserve(data.size());
  for (const EncodedSentence& s : data) {
    gold.push_back(s.gold);
    pred.push_back(decode_encoded(net, s));
  }
  return metrics_from_predictions(tagset, gold, pred).overall.f1;
}

}  // namespace

TrainOutcome train_tagger(const Corpus& corpus, const EmbeddingTable& emb,
                          const TaggerModelConfig& mcfg, const TrainConfig& tcfg) {
  corpus.tagset.validate();
  tcfg.validate();
  if (emb.dim == 0) throw std::invalid_argument("embedding table has dim 0");

  TrainOutcome out;
  TaggerModel& model = out.model;
  model.tagset = corpus.tagset;
  model.embedding = emb;
  model.char_vocab = build_char_vocab(corpus, Split::Train);
  model.seed = tcfg.seed;

  auto train = encode_split(corpus, Split::Train, emb, model.char_vocab);
  auto valid = encode_split(corpus, Split::Valid, emb, model.char_vocab);
  if (train.empty()) throw std::invalid_argument("empty train split");

  TaggerNetConfig ncfg;
  ncfg.char_vocab = model.char_vocab.size() + 1;  // +1 unknown row
  ncfg.char_dim = mcfg.char_dim;
  ncfg.char_hidden = mcfg.char_hidden;
  ncfg.char_bidirectional = mcfg.char_bidirectional;
  ncfg.token_dim = emb.dim;
  ncfg.token_hidden = mcfg.token_hidden;
  ncfg.num_labels = corpus.tagset.size();
  ncfg.head_hidden = mcfg.head_hidden;
  ncfg.use_crf = mcfg.use_crf;

  Rng rng(tcfg.seed);
  model.net = TaggerNet::init(ncfg, rng);
  const LossKind kind =
      mcfg.use_crf ? LossKind::CrfNegLogLik : LossKind::SoftmaxCrossEntropy;

  TaggerNet best = model.net;
  double best_f1 = -1.0;
  size_t best_epoch = 0;
  for (size_t epoch = 1; epoch <= tcfg.max_epochs; ++epoch) {
    const double mean_loss = sgd_epoch(model.net, train, tcfg, kind, rng);
    double f1 = 0.0;
    if (!valid.empty()) {
      f1 = micro_f1_encoded(model.net, model.tagset, valid);
      if (f1 > best_f1) {
        best_f1 = f1;
        best = model.net;
        best_epoch = epoch;
      }
    }
    out.history.push_back({epoch, mean_loss, f1});
  }
  model.epochs_trained = tcfg.max_epochs;
  if (!valid.empty() && best_epoch > 0) {
    model.net = std::move(best);
    model.best_epoch = best_epoch;
  } else {
    // no validation split: keep the final epoch
    model.best_epoch = tcfg.max_epochs;
  }
  return out;
}

std::vector<Vec> predict_p(const TaggerModel& model, const AnnotatedSentence& sent) {
  if (sent.tokens.empty()) return {};
  EncodedSentence enc = encode_sentence(sent, model.embedding, model.char_vocab);
  Mat p = tagger_forward_p(model.net, enc);
  std::vector<Vec> rows(p.rows(), Vec(p.cols()));
  for (size_t t = 0; t < p.rows(); ++t)
    for (size_t k = 0; k < p.cols(); ++k) rows[t][k] = p(t, k);
  return rows;
}

std::vector<int> decode_tags(const TaggerModel& model, const AnnotatedSentence& sent) {
  if (sent.tokens.empty()) return {};
  EncodedSentence enc = encode_sentence(sent, model.embedding, model.char_vocab);
  return decode_encoded(model.net, enc);
}

Metrics evaluate(const TaggerModel& model, const Corpus& corpus, Split split,
                 Exec exec) {
  std::vector<const AnnotatedSentence*> sentences;
  for (const Report& rep : corpus.reports) {
    if (rep.split != split) continue;
    for (const AnnotatedSentence& s : rep.sentences)
      if (!s.tokens.empty()) sentences.push_back(&s);
  }
  std::vector<std::vector<int>> gold(sentences.size()), pred(sentences.size());
  for_each_index(exec, sentences.size(), [&](size_t i) {
    gold[i] = sentences[i]->gold_tags;
    pred[i] = decode_tags(model, *sentences[i]);
  });
  return metrics_from_predictions(model.tagset, gold, pred);
}

std::vector<ProbRecord> extract_name_probs(
    const TaggerModel& model, const Corpus& corpus,
    const std::vector<std::vector<TokenPos>>& positions, NameClass cls,
    VariantKind variant, Exec exec) {
  if (positions.size() != corpus.reports.size())
    throw std::invalid_argument("positions do not cover the corpus");
  const std::string_view want =
      cls == NameClass::Surname ? "PATIENT-SURNAME" : "PATIENT-GIVEN";
  std::vector<std::vector<ProbRecord>> per_report(corpus.reports.size());
  std::vector<std::string> errors(corpus.reports.size());
  for_each_index(exec, corpus.reports.size(), [&](size_t r) {
    const Report& rep = corpus.reports[r];
    std::map<size_t, std::vector<Vec>> p_cache;
    for (const TokenPos& pos : positions[r]) {
      if (pos.sentence >= rep.sentences.size() ||
          pos.token >= rep.sentences[pos.sentence].tokens.size()) {
        errors[r] = "position out of range in report " + rep.id;
        return;
      }
      const AnnotatedSentence& sent = rep.sentences[pos.sentence];
      const int gold = sent.gold_tags[pos.token];
      if (TagSet::category(model.tagset.labels[gold]) != want) {
        errors[r] = "position in report " + rep.id + " does not carry a " +
                    std::string(want) + " tag";
        return;
      }
      auto it = p_cache.find(pos.sentence);
      if (it == p_cache.end())
        it = p_cache.emplace(pos.sentence, predict_p(model, sent)).first;
      ProbRecord rec;
      rec.report_id = rep.id;
      rec.sentence_index = pos.sentence;
      rec.token_index = pos.token;
      rec.p = it->second[pos.token];
      rec.gold_tag = gold;
      rec.variant = variant;
      rec.name = to_lower(sent.tokens[pos.token].text);
      rec.score = rec.p[gold];
      per_report[r].push_back(std::move(rec));
    }
  });
  for (const std::string& e : errors)
    if (!e.empty()) throw std::invalid_argument(e);
  std::vector<ProbRecord> out;
  for (auto& v : per_report)
    for (ProbRecord& r : v) out.push_back(std::move(r));
  return out;
}

std::vector<double> record_scores(const std::vector<ProbRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const ProbRecord& r : records) out.push_back(r.score);
  return out;
}

void write_prob_records_csv(std::ostream& out,
                            const std::vector<ProbRecord>& records,
                            const TagSet& tagset) {
  out << "report_id,sentence,token,variant,name,gold,score";
  for (const std::string& l : tagset.labels) out << ",p_" << l;
  out << '\n';
  for (const ProbRecord& r : records) {
    out << r.report_id << ',' << r.sentence_index << ',' << r.token_index << ','
        << variant_name(r.variant) << ',' << r.name << ','
        << tagset.labels[r.gold_tag] << ',' << format_double(r.score);
    for (double p : r.p) out << ',' << format_double(p);
    out << '\n';
  }
}

std::vector<double> read_prob_scores_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument("empty prob-record csv");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) header.push_back(field);
  }
  const auto it = std::find(header.begin(), header.end(), "score");
  if (it == header.end())
    throw std::invalid_argument("prob-record csv lacks a score column");
  const size_t col = static_cast<size_t>(it - header.begin());
  std::vector<double> out;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    size_t c = 0;
    bool found = false;
    while (std::getline(ss, field, ',')) {
      if (c++ == col) {
        out.push_back(std::stod(field));
        found = true;
        break;
      }
    }
    if (!found)
      throw std::invalid_argument("short csv row at line " + std::to_string(line_no));
  }
  return out;
}

// ----------------------------------------------------------- model io --

namespace {

constexpr const char* kModelFormat = "deid-tagger-model";
constexpr int kModelVersion = 1;

TaggerNet net_shell(const TaggerNetConfig& cfg) {
  Rng rng(0);  // values are overwritten by the loader
  return TaggerNet::init(cfg, rng);
}

}  // namespace

void save_model(const TaggerModel& model, const std::string& path) {
  nlohmann::json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  j["tagset"] = {{"labels", model.tagset.labels}, {"o_index", model.tagset.o_index}};
  j["char_vocab"] = model.char_vocab;
  const TaggerNetConfig& c = model.net.cfg;
  j["config"] = {{"char_vocab", c.char_vocab},
                 {"char_dim", c.char_dim},
                 {"char_hidden", c.char_hidden},
                 {"char_bidirectional", c.char_bidirectional},
                 {"token_dim", c.token_dim},
                 {"token_hidden", c.token_hidden},
                 {"num_labels", c.num_labels},
                 {"head_hidden", c.head_hidden},
                 {"use_crf", c.use_crf}};
  j["seed"] = model.seed;
  j["epochs_trained"] = model.epochs_trained;
  j["best_epoch"] = model.best_epoch;
  nlohmann::json emb;
  emb["dim"] = model.embedding.dim;
  nlohmann::json entries = nlohmann::json::object();
  for (const auto& [word, vec] : model.embedding.entries) entries[word] = vec;
  emb["entries"] = std::move(entries);
  j["embedding"] = std::move(emb);
  nlohmann::json tensors = nlohmann::json::object();
  // trainable_tensors wants a mutable net; serialization only reads
  auto refs = trainable_tensors(const_cast<TaggerNet&>(model.net));
  for (const TensorRef& t : refs)
    tensors[t.name] = std::vector<double>(t.data, t.data + t.size);
  j["tensors"] = std::move(tensors);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << j.dump();
  out << '\n';
  if (!out) throw std::runtime_error("failed writing model file: " + path);
}

TaggerModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt model file " + path + ": " + e.what());
  }
  try {
    if (j.at("format") != kModelFormat)
      throw std::runtime_error("not a tagger model file");
    if (j.at("version") != kModelVersion)
      throw std::runtime_error("unsupported model version");
    TaggerModel model;
    model.tagset.labels = j.at("tagset").at("labels").get<std::vector<std::string>>();
    model.tagset.o_index = j.at("tagset").at("o_index").get<size_t>();
    model.tagset.validate();
    model.char_vocab = j.at("char_vocab").get<std::vector<uint32_t>>();
    const auto& c = j.at("config");
    TaggerNetConfig cfg;
    cfg.char_vocab = c.at("char_vocab").get<size_t>();
    cfg.char_dim = c.at("char_dim").get<size_t>();
    cfg.char_hidden = c.at("char_hidden").get<size_t>();
    cfg.char_bidirectional = c.at("char_bidirectional").get<bool>();
    cfg.token_dim = c.at("token_dim").get<size_t>();
    cfg.token_hidden = c.at("token_hidden").get<size_t>();
    cfg.num_labels = c.at("num_labels").get<size_t>();
    cfg.head_hidden = c.at("head_hidden").get<std::vector<size_t>>();
    cfg.use_crf = c.at("use_crf").get<bool>();
    model.seed = j.at("seed").get<uint64_t>();
    model.epochs_trained = j.at("epochs_trained").get<size_t>();
    model.best_epoch = j.at("best_epoch").get<size_t>();
    model.embedding.dim = j.at("embedding").at("dim").get<size_t>();
    model.embedding.unk.assign(model.embedding.dim, 0.0);
    for (const auto& [word, vec] : j.at("embedding").at("entries").items()) {
      Vec v = vec.get<Vec>();
      if (v.size() != model.embedding.dim)
        throw std::runtime_error("embedding entry width mismatch");
      model.embedding.entries[word] = std::move(v);
    }
    model.net = net_shell(cfg);
    auto refs = trainable_tensors(model.net);
    const auto& tensors = j.at("tensors");
    if (tensors.size() != refs.size())
      throw std::runtime_error("tensor count mismatch");
    for (TensorRef& t : refs) {
      Vec v = tensors.at(t.name).get<Vec>();
      if (v.size() != t.size)
        throw std::runtime_error("tensor size mismatch for " + t.name);
      std::copy(v.begin(), v.end(), t.data);
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt model file " + path + ": " + e.what());
  }
}

}  // namespace deid
