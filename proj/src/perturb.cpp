#include "deid/perturb.hpp"

#include "deid/rng.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>

namespace deid {

std::string_view variant_name(VariantKind k) {
  switch (k) {
    case VariantKind::Orig: return "ORIG";
    case VariantKind::SN1: return "SN1";
    case VariantKind::GN1: return "GN1";
    case VariantKind::SNGN1: return "SNGN1";
    case VariantKind::SN2: return "SN2";
    case VariantKind::GN2: return "GN2";
    case VariantKind::SNGN2: return "SNGN2";
  }
  return "ORIG";
}

VariantKind variant_from_name(std::string_view s) {
  for (VariantKind k : {VariantKind::Orig, VariantKind::SN1, VariantKind::GN1,
                        VariantKind::SNGN1, VariantKind::SN2, VariantKind::GN2,
                        VariantKind::SNGN2})
    if (variant_name(k) == s) return k;
  throw std::invalid_argument("unknown variant kind: " + std::string(s));
}

bool variant_is_inside(VariantKind k) {
  return k == VariantKind::SN1 || k == VariantKind::GN1 || k == VariantKind::SNGN1;
}

bool variant_replaces_surname(VariantKind k) {
  return k == VariantKind::SN1 || k == VariantKind::SNGN1 ||
         k == VariantKind::SN2 || k == VariantKind::SNGN2;
}

bool variant_replaces_given(VariantKind k) {
  return k == VariantKind::GN1 || k == VariantKind::SNGN1 ||
         k == VariantKind::GN2 || k == VariantKind::SNGN2;
}

const std::vector<VariantKind>& all_variants() {
  static const std::vector<VariantKind> kinds = {
      VariantKind::SN1, VariantKind::GN1, VariantKind::SNGN1,
      VariantKind::SN2, VariantKind::GN2, VariantKind::SNGN2};
  return kinds;
}

namespace {

enum class CasePattern { Upper, Title, Lower, Mixed };

CasePattern classify_case(std::string_view s) {
  bool any_alpha = false, all_upper = true, all_lower = true, title = true;
  bool first_alpha = true;
  for (char c : s) {
    const bool up = c >= 'A' && c <= 'Z';
    const bool lo = c >= 'a' && c <= 'z';
    if (!up && !lo) continue;
    any_alpha = true;
    if (!up) all_upper = false;
    if (!lo) all_lower = false;
    if (first_alpha) {
      if (!up) title = false;
      first_alpha = false;
    } else if (!lo) {
      title = false;
    }
  }
  if (!any_alpha) return CasePattern::Lower;
  if (all_upper) return CasePattern::Upper;
  if (all_lower) return CasePattern::Lower;
  if (title) return CasePattern::Title;
  return CasePattern::Mixed;
}

}  // namespace

std::string transfer_case(std::string_view original_surface,
                          std::string_view replacement_canonical) {
  std::string out(replacement_canonical);
  switch (classify_case(original_surface)) {
    case CasePattern::Upper:
      for (char& c : out)
        if (c >= 'a' && c <= 'z') c += 'A' - 'a';
      return out;
    case CasePattern::Lower:
      return out;
    case CasePattern::Title:
    case CasePattern::Mixed:
      // mixed patterns do not transfer; fall back to Title
      for (size_t i = 0; i < out.size(); ++i) {
        if (out[i] >= 'a' && out[i] <= 'z') {
          out[i] += 'A' - 'a';
          break;
        }
        if (out[i] >= 'A' && out[i] <= 'Z') break;
      }
      return out;
  }
  return out;
}

ReplacementPlan ReplacementPlan::inverted() const {
  ReplacementPlan inv;
  inv.kind = kind;
  inv.seed = seed;
  inv.surname_map.resize(surname_map.size());
  inv.given_map.resize(given_map.size());
  for (size_t r = 0; r < surname_map.size(); ++r)
    for (const auto& [from, to] : surname_map[r]) inv.surname_map[r][to] = from;
  for (size_t r = 0; r < given_map.size(); ++r)
    for (const auto& [from, to] : given_map[r]) inv.given_map[r][to] = from;
  return inv;
}

Corpus apply_replacement_plan(const Corpus& corpus, const ReplacementPlan& plan) {
  if (plan.surname_map.size() != corpus.reports.size() ||
      plan.given_map.size() != corpus.reports.size())
    throw std::invalid_argument("replacement plan does not cover the corpus");
  Corpus out = corpus;
  for (size_t r = 0; r < out.reports.size(); ++r) {
    Report& rep = out.reports[r];
    std::set<size_t> touched;
    auto substitute = [&](const std::vector<TokenPos>& positions,
                          const std::map<std::string, std::string>& map) {
      for (const TokenPos& pos : positions) {
        if (pos.sentence >= rep.sentences.size() ||
            pos.token >= rep.sentences[pos.sentence].tokens.size())
          throw std::invalid_argument("name position out of range in report " + rep.id);
        Token& tok = rep.sentences[pos.sentence].tokens[pos.token];
        auto it = map.find(to_lower(tok.text));
        if (it == map.end()) continue;
        tok.text = transfer_case(tok.text, it->second);
        tok.char_ids = decode_utf8(tok.text);
        touched.insert(pos.sentence);
      }
    };
    substitute(rep.surname_positions, plan.surname_map[r]);
    substitute(rep.given_positions, plan.given_map[r]);
    for (size_t si : touched) canonicalize_offsets(rep.sentences[si]);
  }
  return out;
}

VariantResult make_variant(const Corpus& corpus, VariantKind kind,
                           const NameInventory& inv, const NameDict& outside,
                           uint64_t seed) {
  if (kind == VariantKind::Orig)
    throw std::invalid_argument("make_variant on the original kind");
  if (inv.surname_positions.size() != corpus.reports.size())
    throw std::invalid_argument("inventory does not cover the corpus");
  auto check_disjoint = [&](const OrderedNames& pool, const char* what) {
    for (const std::string& n : pool.items())
      if (inv.surnames.contains(n) || inv.givens.contains(n))
        throw std::invalid_argument(std::string("outside ") + what +
                                    " dictionary overlaps the corpus inventory: '" +
                                    n + "'");
  };
  if (!variant_is_inside(kind)) {
    check_disjoint(outside.surnames, "surname");
    check_disjoint(outside.given_male, "given-name");
    check_disjoint(outside.given_female, "given-name");
  }

  Rng rng(seed);
  ReplacementPlan plan;
  plan.kind = kind;
  plan.seed = seed;
  plan.surname_map.resize(corpus.reports.size());
  plan.given_map.resize(corpus.reports.size());

  for (size_t r = 0; r < corpus.reports.size(); ++r) {
    const Report& rep = corpus.reports[r];
    // distinct originals in first-occurrence order
    auto originals = [&](const std::vector<TokenPos>& positions) {
      std::vector<std::string> names;
      for (const TokenPos& pos : positions) {
        std::string n = to_lower(rep.sentences[pos.sentence].tokens[pos.token].text);
        if (std::find(names.begin(), names.end(), n) == names.end())
          names.push_back(std::move(n));
      }
      return names;
    };
    if (variant_replaces_surname(kind)) {
      const auto own = originals(rep.surname_positions);
      for (const std::string& orig : own) {
        std::vector<const std::string*> candidates;
        if (variant_is_inside(kind)) {
          for (const std::string& n : inv.surnames.items())
            if (std::find(own.begin(), own.end(), n) == own.end())
              candidates.push_back(&n);
        } else {
          for (const std::string& n : outside.surnames.items())
            candidates.push_back(&n);
        }
        if (candidates.empty())
          throw std::invalid_argument(
              "no applicable surname replacement for report " + rep.id);
        plan.surname_map[r][orig] = *candidates[rng.below(candidates.size())];
      }
    }
    if (variant_replaces_given(kind)) {
      const auto own = originals(rep.given_positions);
      for (const std::string& orig : own) {
        std::vector<const std::string*> candidates;
        if (variant_is_inside(kind)) {
          // the inventory carries no gender structure; draw from its union
          for (const std::string& n : inv.givens.items())
            if (std::find(own.begin(), own.end(), n) == own.end())
              candidates.push_back(&n);
        } else {
          const bool use_male = rep.patient_gender != Gender::Female;
          const bool use_female = rep.patient_gender != Gender::Male;
          if (use_male)
            for (const std::string& n : outside.given_male.items())
              candidates.push_back(&n);
          if (use_female)
            for (const std::string& n : outside.given_female.items())
              candidates.push_back(&n);
        }
        if (candidates.empty())
          throw std::invalid_argument(
              "no applicable given-name replacement for report " + rep.id);
        plan.given_map[r][orig] = *candidates[rng.below(candidates.size())];
      }
    }
  }
  VariantResult res;
  res.corpus = apply_replacement_plan(corpus, plan);
  res.plan = std::move(plan);
  return res;
}

void write_replacement_plan(std::ostream& out, const ReplacementPlan& plan) {
  out << "variant = " << variant_name(plan.kind) << '\n';
  out << "seed = " << plan.seed << '\n';
  for (size_t r = 0; r < plan.surname_map.size(); ++r)
    for (const auto& [from, to] : plan.surname_map[r])
      out << "report." << r << ".surname." << from << " = " << to << '\n';
  for (size_t r = 0; r < plan.given_map.size(); ++r)
    for (const auto& [from, to] : plan.given_map[r])
      out << "report." << r << ".given." << from << " = " << to << '\n';
}

// -------------------------------------------------------------------------

BruteForceSubstituter::BruteForceSubstituter(const Report& report,
                                             const OrderedNames& dict)
    : names_(&dict) {
  if (dict.empty()) throw std::invalid_argument("empty candidate dictionary");
  if (report.surname_positions.empty())
    throw std::invalid_argument("report " + report.id +
                                " has no surname occurrences");
  std::vector<size_t> keep;
  for (const TokenPos& pos : report.surname_positions)
    if (std::find(keep.begin(), keep.end(), pos.sentence) == keep.end())
      keep.push_back(pos.sentence);
  std::sort(keep.begin(), keep.end());
  std::vector<size_t> remap(report.sentences.size(), SIZE_MAX);
  for (size_t i = 0; i < keep.size(); ++i) {
    remap[keep[i]] = i;
    base_.push_back(report.sentences[keep[i]]);
  }
  for (const TokenPos& pos : report.surname_positions)
    positions_.push_back({remap[pos.sentence], pos.token});
}

BruteUnit BruteForceSubstituter::make(size_t idx) const {
  BruteUnit unit;
  unit.candidate = (*names_)[idx];
  unit.sentences = base_;
  unit.positions = positions_;
  std::set<size_t> touched;
  for (const TokenPos& pos : positions_) {
    Token& tok = unit.sentences[pos.sentence].tokens[pos.token];
    tok.text = transfer_case(tok.text, unit.candidate);
    tok.char_ids = decode_utf8(tok.text);
    touched.insert(pos.sentence);
  }
  for (size_t si : touched) canonicalize_offsets(unit.sentences[si]);
  return unit;
}

std::vector<size_t> select_repetition_reports(const Corpus& corpus,
                                              size_t min_count, size_t k,
                                              uint64_t seed, Split split) {
  std::vector<size_t> qualifying;
  for (size_t r = 0; r < corpus.reports.size(); ++r)
    if (corpus.reports[r].split == split &&
        corpus.reports[r].surname_positions.size() >= min_count)
      qualifying.push_back(r);
  if (qualifying.size() < k)
    throw std::invalid_argument(
        "only " + std::to_string(qualifying.size()) + " " +
        std::string(split_name(split)) + " reports have at least " +
        std::to_string(min_count) + " surname occurrences, need " +
        std::to_string(k));
  Rng rng(seed);
  rng.shuffle(qualifying);
  qualifying.resize(k);
  return qualifying;
}

}  // namespace deid
