#pragma once

#include "deid/corpus.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace deid {

// Name-perturbed corpus variants. Type 1 draws replacements from inside
// the corpus inventory, type 2 from an outside dictionary disjoint from
// it. SN = surnames replaced, GN = given names replaced, SNGN = both.
enum class VariantKind { Orig, SN1, GN1, SNGN1, SN2, GN2, SNGN2 };

std::string_view variant_name(VariantKind);
VariantKind variant_from_name(std::string_view);
bool variant_is_inside(VariantKind);      // draws from the corpus inventory
bool variant_replaces_surname(VariantKind);
bool variant_replaces_given(VariantKind);
const std::vector<VariantKind>& all_variants();  // the six non-Orig kinds

// Re-case a canonical-lowercase replacement to the surface pattern of the
// token it replaces: ALL-CAPS stays ALL-CAPS, Title stays Title, lower
// stays lower, anything mixed becomes Title.
std::string transfer_case(std::string_view original_surface,
                          std::string_view replacement_canonical);

// Per-report replacement maps, canonical original -> canonical
// replacement. The same original always maps to the same replacement
// within a report.
struct ReplacementPlan {
  VariantKind kind = VariantKind::Orig;
  uint64_t seed = 0;
  std::vector<std::map<std::string, std::string>> surname_map;  // by report
  std::vector<std::map<std::string, std::string>> given_map;

  ReplacementPlan inverted() const;  // swaps key and value in every map
};

// Rewrite name tokens according to the plan; structure, tags and
// positions are untouched, offsets re-canonicalized.
Corpus apply_replacement_plan(const Corpus&, const ReplacementPlan&);

struct VariantResult {
  Corpus corpus;
  ReplacementPlan plan;
};

// Build one perturbed variant. Inside kinds draw from the inventory
// excluding the report's own names; outside kinds draw from the outside
// dictionary, matching the gendered pool when the report's patient gender
// is known. Replacements are seeded and per-report consistent.
VariantResult make_variant(const Corpus&, VariantKind, const NameInventory&,
                           const NameDict& outside, uint64_t seed);

void write_replacement_plan(std::ostream&, const ReplacementPlan&);

// One candidate's worth of a brute-force substitution stream: the
// report's surname-bearing sentences with every surname occurrence
// replaced by the candidate.
struct BruteUnit {
  std::string candidate;  // canonical lowercase
  std::vector<AnnotatedSentence> sentences;
  std::vector<TokenPos> positions;  // within the unit's sentence indexing
};

// Random-access generator over dictionary candidates, in dictionary
// order, so scoring loops can run serial or parallel off the same index
// space.
class BruteForceSubstituter {
 public:
  BruteForceSubstituter(const Report&, const OrderedNames& dict);
  size_t size() const { return names_->size(); }
  BruteUnit make(size_t idx) const;

 private:
  const OrderedNames* names_;
  std::vector<AnnotatedSentence> base_;   // insulated sentences
  std::vector<TokenPos> positions_;       // remapped into base_
};

// Uniform seeded sample (without replacement) of k reports of the given
// split whose surname occurrence count is at least min_count. Returns
// report indices.
std::vector<size_t> select_repetition_reports(const Corpus&, size_t min_count,
                                              size_t k, uint64_t seed,
                                              Split split = Split::Train);

}  // namespace deid
