#include "deid/corpus.hpp"

#include "deid/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace deid {

namespace {

bool is_space_byte(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

bool is_punct_byte(unsigned char c) {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') ||
         (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
}

bool is_word_byte(unsigned char c) {
  return !is_space_byte(c) && !is_punct_byte(c);
}

}  // namespace

std::vector<uint32_t> decode_utf8(std::string_view text) {
  std::vector<uint32_t> out;
  size_t i = 0;
  while (i < text.size()) {
    const unsigned char b0 = text[i];
    uint32_t cp = b0;
    size_t len = 1;
    if (b0 >= 0xf0)
      len = 4;
    else if (b0 >= 0xe0)
      len = 3;
    else if (b0 >= 0xc0)
      len = 2;
    if (len > 1 && i + len <= text.size()) {
      static const uint32_t mask[5] = {0, 0x7f, 0x1f, 0x0f, 0x07};
      uint32_t acc = b0 & mask[len];
      bool ok = true;
      for (size_t k = 1; k < len; ++k) {
        const unsigned char bk = text[i + k];
        if ((bk & 0xc0) != 0x80) {
          ok = false;
          break;
        }
        acc = (acc << 6) | (bk & 0x3f);
      }
      if (ok) {
        out.push_back(acc);
        i += len;
        continue;
      }
    }
    out.push_back(cp);  // invalid or lone byte decodes as itself
    ++i;
  }
  return out;
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c += 'a' - 'A';
  return out;
}

Token make_token(std::string text, size_t start) {
  Token t;
  t.char_ids = decode_utf8(text);
  t.start_offset = start;
  t.end_offset = start + text.size();
  t.text = std::move(text);
  return t;
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> out;
  size_t i = 0;
  const size_t n = text.size();
  while (i < n) {
    while (i < n && is_space_byte(text[i])) ++i;
    if (i >= n) break;
    size_t j = i;
    while (j < n && !is_space_byte(text[j])) ++j;
    // chunk [i, j): peel punctuation into standalone tokens, keeping
    // hyphen/apostrophe characters flanked by word bytes inside tokens
    size_t tok_start = i;
    for (size_t p = i; p < j; ++p) {
      const unsigned char c = text[p];
      if (!is_punct_byte(c)) continue;
      const bool joiner = (c == '-' || c == '\'') && p > i && p + 1 < j &&
                          is_word_byte(text[p - 1]) && is_word_byte(text[p + 1]);
      if (joiner) continue;
      if (p > tok_start)
        out.push_back(make_token(std::string(text.substr(tok_start, p - tok_start)), tok_start));
      out.push_back(make_token(std::string(1, static_cast<char>(c)), p));
      tok_start = p + 1;
    }
    if (j > tok_start)
      out.push_back(make_token(std::string(text.substr(tok_start, j - tok_start)), tok_start));
    i = j;
  }
  return out;
}

std::string reconstruct(std::string_view original, const std::vector<Token>& tokens) {
  std::string out;
  size_t pos = 0;
  for (const Token& t : tokens) {
    if (t.start_offset < pos || t.end_offset > original.size())
      throw std::invalid_argument("reconstruct: token offsets out of order");
    out.append(original.substr(pos, t.start_offset - pos));
    out.append(t.text);
    pos = t.end_offset;
  }
  out.append(original.substr(pos));
  return out;
}

// -------------------------------------------------------------------------

TagSet TagSet::standard() {
  TagSet t;
  t.labels = {"O",
              "B-PATIENT-SURNAME", "I-PATIENT-SURNAME",
              "B-PATIENT-GIVEN",   "I-PATIENT-GIVEN",
              "B-DOCTOR",          "I-DOCTOR",
              "B-DATE",            "I-DATE",
              "B-LOCATION",        "I-LOCATION",
              "B-ID",              "I-ID"};
  t.o_index = 0;
  return t;
}

int TagSet::index_of(std::string_view label) const {
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == label) return static_cast<int>(i);
  return -1;
}

std::string_view TagSet::category(std::string_view label) {
  if (label.size() > 2 && (label.starts_with("B-") || label.starts_with("I-")))
    return label.substr(2);
  return {};
}

bool TagSet::is_b(size_t idx) const { return labels[idx].starts_with("B-"); }
bool TagSet::is_i(size_t idx) const { return labels[idx].starts_with("I-"); }

void TagSet::validate() const {
  if (labels.empty()) throw std::invalid_argument("tag set is empty");
  if (o_index >= labels.size() || labels[o_index] != "O")
    throw std::invalid_argument("tag set lacks an O label at o_index");
  std::set<std::string> seen;
  for (const std::string& l : labels) {
    if (!seen.insert(l).second)
      throw std::invalid_argument("duplicate tag label: " + l);
    if (l == "O") continue;
    if (!l.starts_with("B-") && !l.starts_with("I-"))
      throw std::invalid_argument("tag label is neither O nor B-/I-: " + l);
    if (l.size() <= 2) throw std::invalid_argument("tag label has empty category: " + l);
  }
  for (const std::string& l : labels) {
    if (l.starts_with("I-") && !seen.contains("B-" + l.substr(2)))
      throw std::invalid_argument("I- label without matching B-: " + l);
  }
}

// -------------------------------------------------------------------------

void canonicalize_offsets(AnnotatedSentence& s) {
  size_t pos = 0;
  for (Token& t : s.tokens) {
    t.start_offset = pos;
    t.end_offset = pos + t.text.size();
    pos = t.end_offset + 1;
  }
}

std::string sentence_text(const AnnotatedSentence& s) {
  std::string out;
  for (size_t i = 0; i < s.tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out.append(s.tokens[i].text);
  }
  return out;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "train";
}

void refresh_name_positions(Corpus& corpus) {
  for (Report& report : corpus.reports) {
    report.surname_positions.clear();
    report.given_positions.clear();
    for (size_t si = 0; si < report.sentences.size(); ++si) {
      const AnnotatedSentence& s = report.sentences[si];
      for (size_t ti = 0; ti < s.tokens.size(); ++ti) {
        const auto cat = TagSet::category(corpus.tagset.labels[s.gold_tags[ti]]);
        if (cat == "PATIENT-SURNAME")
          report.surname_positions.push_back({si, ti});
        else if (cat == "PATIENT-GIVEN")
          report.given_positions.push_back({si, ti});
      }
    }
  }
}

// -------------------------------------------------------------------------

bool OrderedNames::add(std::string name) {
  std::string lower = to_lower(name);
  if (index_.contains(lower)) return false;
  index_.insert(lower);
  items_.push_back(std::move(lower));
  return true;
}

bool OrderedNames::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

OrderedNames load_name_list(std::istream& in) {
  OrderedNames names;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (tokenize(line).size() != 1)
      throw std::invalid_argument("dictionary name at line " + std::to_string(line_no) +
                                  " does not tokenize to a single token: '" + line + "'");
    names.add(line);
  }
  return names;
}

void write_name_list(std::ostream& out, const OrderedNames& names) {
  for (const std::string& n : names.items()) out << n << '\n';
}

namespace {

std::vector<std::string> syllable_grid(const std::vector<std::string_view>& a,
                                       const std::vector<std::string_view>& b,
                                       const std::vector<std::string_view>& c,
                                       size_t n, uint64_t seed, const char* what) {
  const size_t capacity = a.size() * b.size() * (c.empty() ? 1 : c.size());
  if (n > capacity)
    throw std::invalid_argument(std::string("synthetic ") + what + " grid holds " +
                                std::to_string(capacity) + " names, requested " +
                                std::to_string(n));
  std::vector<size_t> idx(capacity);
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  std::vector<std::string> out;
  out.reserve(n);
  const size_t cs = c.empty() ? 1 : c.size();
  for (size_t k = 0; k < n; ++k) {
    const size_t i = idx[k];
    std::string name;
    name += a[i / (b.size() * cs)];
    name += b[(i / cs) % b.size()];
    if (!c.empty()) name += c[i % cs];
    out.push_back(std::move(name));
  }
  return out;
}

}  // namespace

NameDict synth_name_dictionary(size_t n_surnames, size_t n_given_male,
                               size_t n_given_female, uint64_t seed) {
  using svv = std::vector<std::string_view>;
  static const svv sur_a = {"bal", "cor", "dan", "fen",  "gar",  "hol",
                            "jor", "kel", "lam", "mor",  "nel",  "ost",
                            "per", "quin", "ros", "sal", "tam",  "ulm",
                            "ven", "wik", "ash", "bro",  "cal",  "dre",
                            "els", "fair", "gra", "hart", "ing", "kirk"};
  static const svv sur_b = {"a",  "e",  "i",  "o",  "u",  "ar", "en", "il", "on",
                            "ur", "ad", "eb", "ig", "ob", "ud", "am", "em", "im",
                            "om", "um", "as", "es", "is", "os", "us"};
  static const svv sur_c = {"son",   "berg",  "feld",  "gren",  "holm",  "land",
                            "mark",  "ness",  "quist", "rook",  "stad",  "thal",
                            "vik",   "wald",  "ford",  "gate",  "hurst", "combe",
                            "shaw",  "wick",  "ton",   "worth", "field", "brook",
                            "stone", "dale",  "more",  "house", "well",  "ridge"};
  static const svv male_a = {"al",  "ber", "carl", "dav",  "ed",  "fre", "gor",
                             "har", "iv",  "jam",  "kar",  "leo", "mar", "nor",
                             "os",  "pat", "quen", "rob",  "sam", "theo", "ul",
                             "vic", "wal", "xan",  "yor"};
  static const svv male_b = {"an",   "bert", "den",  "fred", "ik",  "lan",
                             "mund", "nard", "rick", "ston", "ter", "win",
                             "old",  "ard",  "vin",  "gus"};
  static const svv fem_a = {"ad",  "bel",  "cla", "del", "ela", "fio", "gre",
                            "hel", "ida",  "jul", "kat", "lil", "mir", "nad",
                            "ola", "pri",  "ros", "sel", "tia", "una", "vera",
                            "wil", "xen",  "yas", "zel"};
  static const svv fem_b = {"a",    "ana", "elle", "ette", "ia",  "ina",
                            "issa", "ita", "lyn",  "mae",  "nda", "nne",
                            "ra",   "rie", "sha",  "thea"};

  NameDict dict;
  for (std::string& s : syllable_grid(sur_a, sur_b, sur_c, n_surnames,
                                      derive_seed(seed, "dict.surnames"), "surname"))
    dict.surnames.add(std::move(s));
  for (std::string& s : syllable_grid(male_a, male_b, {}, n_given_male,
                                      derive_seed(seed, "dict.given_male"), "male given-name"))
    dict.given_male.add(std::move(s));
  for (std::string& s : syllable_grid(fem_a, fem_b, {}, n_given_female,
                                      derive_seed(seed, "dict.given_female"), "female given-name"))
    dict.given_female.add(std::move(s));
  return dict;
}

// -------------------------------------------------------------------------

void SynthConfig::validate() const {
  if (names_per_report < 1)
    throw std::invalid_argument("names_per_report must be at least 1");
  if (min_repetition_quota > n_reports)
    throw std::invalid_argument("min_repetition_quota exceeds n_reports");
  if (train_ratio < 0 || valid_ratio < 0 || test_ratio < 0)
    throw std::invalid_argument("split ratios must be non-negative");
  const double sum = train_ratio + valid_ratio + test_ratio;
  if (sum < 1.0 - 1e-9 || sum > 1.0 + 1e-9)
    throw std::invalid_argument("split ratios must sum to 1");
  if (template_count > synth_template_inventory_size())
    throw std::invalid_argument("template_count exceeds the template inventory");
}

namespace {

// Sentence templates; {S} patient surname, {G} patient given name,
// {DR} doctor, {D} date, {L} location, {ID} record number. Surname-bearing
// and filler templates alternate so any prefix of the inventory keeps both.
const std::vector<std::string_view>& template_inventory() {
  static const std::vector<std::string_view> tpl = {
      "Patient {G} {S} was admitted on {D} .",
      "Vital signs were within normal limits .",
      "{G} {S} presented to the {L} emergency department .",
      "Dr . {DR} ordered a chest radiograph on {D} .",
      "Dr . {DR} examined {G} {S} on {D} .",
      "The care team at {L} reviewed the imaging .",
      "Mr {S} reports chest pain since {D} .",
      "Medication list was reconciled on {D} .",
      "The patient {S} was discharged home on {D} .",
      "Visit {ID} was billed to the primary insurer .",
      "Labs for {S} were reviewed by Dr . {DR} .",
      "No acute distress was noted during the exam .",
      "{S} will follow up at the {L} clinic on {D} .",
      "The patient was counseled on diet and exercise .",
      "Ms {S} denies fever and chills .",
      "Follow up was scheduled at the {L} outpatient center .",
      "Record {ID} was updated for patient {S} .",
      "Dr . {DR} dictated the operative summary .",
      "{G} {S} tolerated the procedure well .",
      "Telemetry was discontinued on {D} .",
      "Nursing notes for {S} were cosigned by Dr . {DR} .",
      "Chart {ID} includes prior imaging from {L} .",
      "{S} remains stable on current medication .",
      "The family meeting was held on {D} .",
  };
  return tpl;
}

bool template_has_surname(std::string_view tpl) {
  return tpl.find("{S}") != std::string_view::npos;
}

std::string title_case(std::string_view lower) {
  std::string out(lower);
  if (!out.empty() && out[0] >= 'a' && out[0] <= 'z') out[0] += 'A' - 'a';
  return out;
}

std::vector<std::string_view> split_template(std::string_view tpl) {
  std::vector<std::string_view> out;
  size_t i = 0;
  while (i < tpl.size()) {
    while (i < tpl.size() && tpl[i] == ' ') ++i;
    size_t j = i;
    while (j < tpl.size() && tpl[j] != ' ') ++j;
    if (j > i) out.push_back(tpl.substr(i, j - i));
    i = j;
  }
  return out;
}

}  // namespace

size_t synth_template_inventory_size() { return template_inventory().size(); }

SynthResult generate_synthetic_corpus(const SynthConfig& cfg, const NameDict& dict) {
  cfg.validate();
  SynthResult res;
  res.corpus.tagset = TagSet::standard();
  if (cfg.n_reports == 0) return res;

  constexpr size_t kDoctorPool = 8;
  if (dict.surnames.size() < cfg.n_reports + kDoctorPool)
    throw std::invalid_argument(
        "surname dictionary too small: need at least " +
        std::to_string(cfg.n_reports + kDoctorPool) +
        " names (one distinct patient surname per report plus " +
        std::to_string(kDoctorPool) + " doctor names), have " +
        std::to_string(dict.surnames.size()));
  if (dict.given_male.empty() && dict.given_female.empty())
    throw std::invalid_argument("given-name dictionary is empty");

  Rng rng(cfg.seed);

  std::vector<size_t> name_idx(dict.surnames.size());
  std::iota(name_idx.begin(), name_idx.end(), size_t{0});
  rng.shuffle(name_idx);

  static const std::vector<std::string_view> locations = {
      "Riverside", "Lakeview", "Northgate", "Fairview", "Eastbrook", "Hillcrest"};

  const auto& inventory = template_inventory();
  const size_t tpl_count = cfg.template_count ? cfg.template_count : inventory.size();
  std::vector<std::string_view> tpl_surname, tpl_filler;
  for (size_t t = 0; t < tpl_count; ++t) {
    (template_has_surname(inventory[t]) ? tpl_surname : tpl_filler).push_back(inventory[t]);
  }
  if (tpl_surname.empty())
    throw std::invalid_argument("template slice has no surname-bearing template");

  const TagSet& ts = res.corpus.tagset;
  const int tag_o = static_cast<int>(ts.o_index);
  const int tag_s = ts.index_of("B-PATIENT-SURNAME");
  const int tag_g = ts.index_of("B-PATIENT-GIVEN");
  const int tag_dr = ts.index_of("B-DOCTOR");
  const int tag_d = ts.index_of("B-DATE");
  const int tag_l = ts.index_of("B-LOCATION");
  const int tag_id = ts.index_of("B-ID");

  for (size_t r = 0; r < cfg.n_reports; ++r) {
    Report report;
    report.id = "r" + std::to_string(r);
    const std::string& surname = dict.surnames[name_idx[r]];

    const OrderedNames* pool = nullptr;
    if (dict.given_male.empty()) {
      report.patient_gender = Gender::Female;
      pool = &dict.given_female;
    } else if (dict.given_female.empty()) {
      report.patient_gender = Gender::Male;
      pool = &dict.given_male;
    } else if (rng.below(2) == 0) {
      report.patient_gender = Gender::Male;
      pool = &dict.given_male;
    } else {
      report.patient_gender = Gender::Female;
      pool = &dict.given_female;
    }
    const std::string& given = (*pool)[rng.below(pool->size())];

    const bool quota_report = r < cfg.min_repetition_quota;
    const size_t mentions =
        quota_report ? 6 + rng.below(3) : cfg.names_per_report;

    std::vector<std::string_view> picks;
    for (size_t k = 0; k < mentions; ++k)
      picks.push_back(tpl_surname[rng.below(tpl_surname.size())]);
    if (!tpl_filler.empty()) {
      const size_t fillers = 2 + rng.below(3);
      for (size_t k = 0; k < fillers; ++k)
        picks.push_back(tpl_filler[rng.below(tpl_filler.size())]);
    }
    rng.shuffle(picks);

    for (std::string_view tpl : picks) {
      AnnotatedSentence sent;
      for (std::string_view slot : split_template(tpl)) {
        std::string text;
        int tag = tag_o;
        if (slot == "{S}") {
          text = title_case(surname);
          tag = tag_s;
        } else if (slot == "{G}") {
          text = title_case(given);
          tag = tag_g;
        } else if (slot == "{DR}") {
          text = title_case(dict.surnames[name_idx[dict.surnames.size() - 1 - rng.below(kDoctorPool)]]);
          tag = tag_dr;
        } else if (slot == "{D}") {
          char buf[16];
          std::snprintf(buf, sizeof buf, "%04llu-%02llu-%02llu",
                        static_cast<unsigned long long>(2010 + rng.below(10)),
                        static_cast<unsigned long long>(1 + rng.below(12)),
                        static_cast<unsigned long long>(1 + rng.below(28)));
          text = buf;
          tag = tag_d;
        } else if (slot == "{L}") {
          text = locations[rng.below(locations.size())];
          tag = tag_l;
        } else if (slot == "{ID}") {
          text = std::to_string(100000 + rng.below(900000));
          tag = tag_id;
        } else {
          text = slot;
        }
        sent.tokens.push_back(make_token(std::move(text), 0));
        sent.gold_tags.push_back(tag);
      }
      canonicalize_offsets(sent);
      report.sentences.push_back(std::move(sent));
    }
    res.corpus.reports.push_back(std::move(report));
  }

  // Split assignment: quota reports stay in train so repetition attacks
  // have in-training targets; the rest are shuffled into the ratios.
  const size_t n = cfg.n_reports;
  size_t n_train = static_cast<size_t>(cfg.train_ratio * static_cast<double>(n) + 0.5);
  n_train = std::max(n_train, cfg.min_repetition_quota);
  n_train = std::min(n_train, n);
  size_t n_valid = static_cast<size_t>(cfg.valid_ratio * static_cast<double>(n) + 0.5);
  n_valid = std::min(n_valid, n - n_train);
  std::vector<size_t> rest;
  for (size_t r = cfg.min_repetition_quota; r < n; ++r) rest.push_back(r);
  rng.shuffle(rest);
  size_t assigned_train = cfg.min_repetition_quota;
  size_t pos = 0;
  for (; assigned_train < n_train && pos < rest.size(); ++pos, ++assigned_train)
    res.corpus.reports[rest[pos]].split = Split::Train;
  for (size_t k = 0; k < n_valid && pos < rest.size(); ++k, ++pos)
    res.corpus.reports[rest[pos]].split = Split::Valid;
  for (; pos < rest.size(); ++pos) res.corpus.reports[rest[pos]].split = Split::Test;

  refresh_name_positions(res.corpus);

  std::set<std::string> distinct_s, distinct_g;
  for (const Report& rep : res.corpus.reports) {
    res.stats.surname_occurrences += rep.surname_positions.size();
    res.stats.given_occurrences += rep.given_positions.size();
    if (rep.surname_positions.size() >= 6) ++res.stats.reports_with_six_plus;
    for (const TokenPos& p : rep.surname_positions)
      distinct_s.insert(to_lower(rep.sentences[p.sentence].tokens[p.token].text));
    for (const TokenPos& p : rep.given_positions)
      distinct_g.insert(to_lower(rep.sentences[p.sentence].tokens[p.token].text));
  }
  res.stats.distinct_surnames = distinct_s.size();
  res.stats.distinct_givens = distinct_g.size();
  return res;
}

// -------------------------------------------------------------------------

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace

ParseResult parse_conll(std::istream& in, const TagSet& tagset) {
  tagset.validate();
  ParseResult res;
  res.corpus.tagset = tagset;
  auto& reports = res.corpus.reports;

  std::vector<Token> toks;
  std::vector<int> tags;
  auto flush_sentence = [&]() {
    if (toks.empty()) return;
    AnnotatedSentence s;
    s.tokens = std::move(toks);
    s.gold_tags = std::move(tags);
    canonicalize_offsets(s);
    reports.back().sentences.push_back(std::move(s));
    toks.clear();
    tags.clear();
  };

  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string at = " at line " + std::to_string(line_no);
    if (line.empty()) {
      if (!reports.empty()) flush_sentence();
      continue;
    }
    if (line.starts_with("#doc")) {
      if (line.size() < 6 || line[4] != ' ')
        throw std::invalid_argument("malformed #doc header" + at);
      if (!reports.empty()) flush_sentence();
      auto fields = split_tabs(line.substr(5));
      if (fields[0].empty())
        throw std::invalid_argument("empty report id" + at);
      if (fields.size() > 3)
        throw std::invalid_argument("too many #doc fields" + at);
      Report rep;
      rep.id = fields[0];
      if (fields.size() > 1) {
        if (fields[1] == "train")
          rep.split = Split::Train;
        else if (fields[1] == "valid")
          rep.split = Split::Valid;
        else if (fields[1] == "test")
          rep.split = Split::Test;
        else
          throw std::invalid_argument("unknown split '" + fields[1] + "'" + at);
      }
      if (fields.size() > 2) {
        if (fields[2] == "m")
          rep.patient_gender = Gender::Male;
        else if (fields[2] == "f")
          rep.patient_gender = Gender::Female;
        else
          throw std::invalid_argument("unknown gender '" + fields[2] + "'" + at);
      }
      reports.push_back(std::move(rep));
      continue;
    }
    auto fields = split_tabs(line);
    if (fields.size() != 2)
      throw std::invalid_argument("expected 2 tab-separated fields, got " +
                                  std::to_string(fields.size()) + at);
    if (reports.empty())
      throw std::invalid_argument("token line before any #doc header" + at);
    if (fields[0].empty())
      throw std::invalid_argument("empty token text" + at);
    int tag = tagset.index_of(fields[1]);
    if (tag < 0)
      throw std::invalid_argument("unknown tag '" + fields[1] + "'" + at);
    // repair I-X that does not continue a B-X/I-X run
    if (tagset.is_i(static_cast<size_t>(tag))) {
      const auto cat = TagSet::category(tagset.labels[tag]);
      bool continues = false;
      if (!tags.empty()) {
        const std::string& prev = tagset.labels[tags.back()];
        continues = TagSet::category(prev) == cat;
      }
      if (!continues) {
        tag = tagset.index_of("B-" + std::string(cat));
        ++res.repaired_tags;
      }
    }
    toks.push_back(make_token(std::move(fields[0]), 0));
    tags.push_back(tag);
  }
  if (!reports.empty()) flush_sentence();
  refresh_name_positions(res.corpus);
  return res;
}

void emit_conll(const Corpus& corpus, std::ostream& out) {
  for (const Report& rep : corpus.reports) {
    out << "#doc " << rep.id << '\t' << split_name(rep.split);
    if (rep.patient_gender == Gender::Male) out << "\tm";
    if (rep.patient_gender == Gender::Female) out << "\tf";
    out << '\n';
    for (const AnnotatedSentence& s : rep.sentences) {
      for (size_t i = 0; i < s.tokens.size(); ++i)
        out << s.tokens[i].text << '\t' << corpus.tagset.labels[s.gold_tags[i]] << '\n';
      out << '\n';
    }
  }
}

// -------------------------------------------------------------------------

NameInventory build_name_inventory(const Corpus& corpus) {
  NameInventory inv;
  inv.surname_positions.resize(corpus.reports.size());
  inv.given_positions.resize(corpus.reports.size());
  for (size_t r = 0; r < corpus.reports.size(); ++r) {
    const Report& rep = corpus.reports[r];
    for (size_t si = 0; si < rep.sentences.size(); ++si) {
      const AnnotatedSentence& s = rep.sentences[si];
      for (size_t ti = 0; ti < s.tokens.size(); ++ti) {
        const auto cat = TagSet::category(corpus.tagset.labels[s.gold_tags[ti]]);
        if (cat == "PATIENT-SURNAME") {
          inv.surnames.add(s.tokens[ti].text);
          inv.surname_positions[r].push_back({si, ti});
        } else if (cat == "PATIENT-GIVEN") {
          inv.givens.add(s.tokens[ti].text);
          inv.given_positions[r].push_back({si, ti});
        }
      }
    }
  }
  return inv;
}

NameDict make_outside_dict(const NameDict& dict, const NameInventory& inv) {
  auto filter = [&](const OrderedNames& src) {
    OrderedNames out;
    for (const std::string& n : src.items())
      if (!inv.surnames.contains(n) && !inv.givens.contains(n)) out.add(n);
    return out;
  };
  NameDict outside;
  outside.surnames = filter(dict.surnames);
  outside.given_male = filter(dict.given_male);
  outside.given_female = filter(dict.given_female);
  return outside;
}

}  // namespace deid
