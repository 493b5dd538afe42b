#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace deid {

struct Token {
  std::string text;
  std::vector<uint32_t> char_ids;  // Unicode code points of text
  size_t start_offset = 0;         // byte offsets into the source string
  size_t end_offset = 0;

  bool operator==(const Token&) const = default;
};

// Decode UTF-8 into code points. Invalid bytes decode as their own value
// so the function never fails on arbitrary input.
std::vector<uint32_t> decode_utf8(std::string_view text);

// ASCII lowercase.
std::string to_lower(std::string_view s);

// Rule-based deterministic tokenizer: split on whitespace, make every
// punctuation character its own token except hyphens and apostrophes
// flanked by word characters. Offsets index bytes of the input, so the
// original text is reconstructible from tokens plus separator bytes.
std::vector<Token> tokenize(std::string_view text);

// Rebuild the source string from its tokens and the separator bytes of
// the original; equality with the original is the tokenizer's offset law.
std::string reconstruct(std::string_view original, const std::vector<Token>& tokens);

// Build a token from text alone with the given start offset (char_ids and
// end_offset derived). Used wherever sentences are synthesized.
Token make_token(std::string text, size_t start);

// -------------------------------------------------------------------------

struct TagSet {
  std::vector<std::string> labels;  // "O" plus B-/I- pairs
  size_t o_index = 0;

  static TagSet standard();

  size_t size() const { return labels.size(); }
  int index_of(std::string_view label) const;  // -1 when absent
  // "PATIENT-SURNAME" for B-/I- labels, "" for O
  static std::string_view category(std::string_view label);
  bool is_b(size_t idx) const;
  bool is_i(size_t idx) const;
  void validate() const;  // throws when the BIO invariants are broken

  bool operator==(const TagSet&) const = default;
};

struct AnnotatedSentence {
  std::vector<Token> tokens;
  std::vector<int> gold_tags;  // indices into the tag set, same length

  bool operator==(const AnnotatedSentence&) const = default;
};

// Space-join token texts and refresh offsets accordingly. All corpora in
// this codebase keep offsets in this canonical form so that emit/parse and
// substitution round-trips are byte-exact.
void canonicalize_offsets(AnnotatedSentence& s);
std::string sentence_text(const AnnotatedSentence& s);

struct TokenPos {
  size_t sentence = 0;
  size_t token = 0;
  auto operator<=>(const TokenPos&) const = default;
};

enum class Split { Train, Valid, Test };
std::string_view split_name(Split);

enum class Gender { Unknown, Male, Female };

struct Report {
  std::string id;
  std::vector<AnnotatedSentence> sentences;
  std::vector<TokenPos> surname_positions;  // every PATIENT-SURNAME token
  std::vector<TokenPos> given_positions;    // every PATIENT-GIVEN token
  Split split = Split::Train;
  Gender patient_gender = Gender::Unknown;

  bool operator==(const Report&) const = default;
};

struct Corpus {
  TagSet tagset;
  std::vector<Report> reports;

  bool operator==(const Corpus&) const = default;
};

// Recompute surname/given position lists of every report from gold tags.
void refresh_name_positions(Corpus&);

// -------------------------------------------------------------------------

// Insertion-ordered set of canonical-lowercase names. Order is load order
// and is significant: brute-force candidate streams follow it.
class OrderedNames {
 public:
  // lowercases; returns false when the name was already present
  bool add(std::string name);
  bool contains(std::string_view name) const;
  size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const std::vector<std::string>& items() const { return items_; }
  const std::string& operator[](size_t i) const { return items_[i]; }

 private:
  std::vector<std::string> items_;
  std::unordered_set<std::string> index_;
};

struct NameDict {
  OrderedNames surnames;
  OrderedNames given_male;
  OrderedNames given_female;
};

// One name per line; blank lines skipped; names lowercased and deduped.
// Every name must tokenize to a single token.
OrderedNames load_name_list(std::istream&);
void write_name_list(std::ostream&, const OrderedNames&);

// Pronounceable synthetic names built from syllable grids, shuffled under
// the seed. Throws when a requested count exceeds the grid capacity.
NameDict synth_name_dictionary(size_t n_surnames, size_t n_given_male,
                               size_t n_given_female, uint64_t seed);

// -------------------------------------------------------------------------

struct SynthConfig {
  size_t n_reports = 60;
  size_t names_per_report = 3;      // baseline surname mentions per report
  size_t min_repetition_quota = 3;  // reports guaranteed >= 6 surname mentions
  double train_ratio = 0.7;
  double valid_ratio = 0.15;
  double test_ratio = 0.15;
  size_t template_count = 0;  // 0 = whole template inventory
  uint64_t seed = 1;

  void validate() const;
};

struct SynthStats {
  size_t distinct_surnames = 0;
  size_t distinct_givens = 0;
  size_t surname_occurrences = 0;
  size_t given_occurrences = 0;
  size_t reports_with_six_plus = 0;
};

struct SynthResult {
  Corpus corpus;
  SynthStats stats;
};

size_t synth_template_inventory_size();

// Seeded synthetic clinical notes. Every report gets a distinct patient
// surname; quota reports carry >= 6 surname mentions and land in the train
// split so repetition attacks have in-training targets.
SynthResult generate_synthetic_corpus(const SynthConfig&, const NameDict&);

// -------------------------------------------------------------------------

// CoNLL-style serialization: "token<TAB>tag" lines, blank line between
// sentences, "#doc <id>[<TAB>split[<TAB>gender]]" between reports.
struct ParseResult {
  Corpus corpus;
  size_t repaired_tags = 0;  // I-after-O repairs promoted to B-
};

ParseResult parse_conll(std::istream&, const TagSet&);
void emit_conll(const Corpus&, std::ostream&);

// -------------------------------------------------------------------------

struct NameInventory {
  OrderedNames surnames;
  OrderedNames givens;
  std::vector<std::vector<TokenPos>> surname_positions;  // by report index
  std::vector<std::vector<TokenPos>> given_positions;
};

NameInventory build_name_inventory(const Corpus&);

// Dictionary minus every name in the corpus inventory; the draw pool for
// outside (type 2) variants.
NameDict make_outside_dict(const NameDict&, const NameInventory&);

}  // namespace deid
