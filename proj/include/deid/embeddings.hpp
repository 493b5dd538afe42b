#pragma once

#include "deid/corpus.hpp"
#include "deid/linalg.hpp"

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

namespace deid {

// Frozen word-vector table. Lookup is by canonical lowercase form; case
// information travels through the character channel instead. Training
// never writes to this table.
struct EmbeddingTable {
  size_t dim = 0;
  std::unordered_map<std::string, Vec> entries;
  Vec unk;  // zero vector of length dim

  const Vec& lookup(std::string_view word) const;
};

// "word v1 ... v_dim" per line, whitespace separated. Words are
// lowercased; a line whose value count differs from dim is an error.
EmbeddingTable load_word_vectors(std::istream&, size_t dim);

const Vec& embed_token(const EmbeddingTable&, const Token&);

// Unit-norm pseudo-random vectors, one per vocab word. Each word's vector
// depends only on (seed, word), not on vocab order.
EmbeddingTable synth_embedding(const std::vector<std::string>& vocab, size_t dim,
                               uint64_t seed);

void write_word_vectors(std::ostream&, const EmbeddingTable&);

// Order-independent content hash; the freeze-law tests compare it before
// and after training.
uint64_t embedding_fingerprint(const EmbeddingTable&);

}  // namespace deid
