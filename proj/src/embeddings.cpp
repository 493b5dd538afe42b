#include "deid/embeddings.hpp"

#include "deid/rng.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace deid {

const Vec& EmbeddingTable::lookup(std::string_view word) const {
  auto it = entries.find(std::string(word));
  return it == entries.end() ? unk : it->second;
}

const Vec& embed_token(const EmbeddingTable& table, const Token& token) {
  return table.lookup(to_lower(token.text));
}

EmbeddingTable load_word_vectors(std::istream& in, size_t dim) {
  if (dim == 0) throw std::invalid_argument("embedding dim must be positive");
  EmbeddingTable table;
  table.dim = dim;
  table.unk.assign(dim, 0.0);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    Vec v;
    v.reserve(dim);
    double x;
    while (ss >> x) v.push_back(x);
    if (!ss.eof() || v.size() != dim)
      throw std::invalid_argument("expected " + std::to_string(dim) +
                                  " values at line " + std::to_string(line_no) +
                                  ", got " + std::to_string(v.size()));
    table.entries[to_lower(word)] = std::move(v);
  }
  return table;
}

EmbeddingTable synth_embedding(const std::vector<std::string>& vocab, size_t dim,
                               uint64_t seed) {
  if (vocab.empty()) throw std::invalid_argument("synth_embedding: empty vocab");
  if (dim == 0) throw std::invalid_argument("embedding dim must be positive");
  EmbeddingTable table;
  table.dim = dim;
  table.unk.assign(dim, 0.0);
  for (const std::string& word : vocab) {
    Rng rng(mix64(seed ^ fnv1a64(word)));
    Vec v(dim);
    double norm2 = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    table.entries[to_lower(word)] = std::move(v);
  }
  return table;
}

void write_word_vectors(std::ostream& out, const EmbeddingTable& table) {
  std::map<std::string, const Vec*> ordered;
  for (const auto& [word, vec] : table.entries) ordered[word] = &vec;
  char buf[64];
  for (const auto& [word, vec] : ordered) {
    out << word;
    for (double x : *vec) {
      auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x);
      out << ' ' << std::string_view(buf, end - buf);
      (void)ec;
    }
    out << '\n';
  }
}

uint64_t embedding_fingerprint(const EmbeddingTable& table) {
  uint64_t total = mix64(table.dim);
  for (const auto& [word, vec] : table.entries) {
    uint64_t h = fnv1a64(word);
    for (double x : vec) h = mix64(h ^ std::bit_cast<uint64_t>(x));
    total += h;  // addition keeps the hash independent of map order
  }
  return total;
}

}  // namespace deid
