#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "refine/corpus.hpp"
#include "refine/errors.hpp"
#include "refine/parallel.hpp"

namespace refine {

using EmbeddingVector = std::vector<double>;
using EmbedFn = std::function<EmbeddingVector(const std::string&)>;

struct RetrievalResult {
  std::string doc_id;
  double score;  // cosine similarity to the query
};

inline double dot(const EmbeddingVector& a, const EmbeddingVector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const EmbeddingVector& a) { return std::sqrt(dot(a, a)); }

// Cosine similarity; rejects zero-norm operands since they signal a
// degenerate embedding the encoder contract forbids.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size()) {
    throw ValidationError("cosine: dimension mismatch (" + std::to_string(a.size()) +
                          " vs " + std::to_string(b.size()) + ")");
  }
  double na = norm(a);
  double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm vector");
  return dot(a, b) / (na * nb);
}

// Exact brute-force similarity search over a fixed-dimension collection.
// Immutable after ingest; concurrent searches need no synchronization.
class VectorStore {
public:
  explicit VectorStore(std::size_t dimension) : dimension_(dimension) {
    if (dimension == 0) throw ValidationError("VectorStore: dimension must be positive");
  }

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  bool contains(const std::string& doc_id) const { return index_.count(doc_id) != 0; }

  const EmbeddingVector& vector_of(const std::string& doc_id) const {
    auto it = index_.find(doc_id);
    if (it == index_.end()) throw ValidationError("VectorStore: unknown id '" + doc_id + "'");
    return vectors_[it->second];
  }

  void insert(const std::string& doc_id, EmbeddingVector vec) {
    if (vec.size() != dimension_) {
      throw ValidationError("VectorStore: vector for '" + doc_id + "' has dimension " +
                            std::to_string(vec.size()) + ", store expects " +
                            std::to_string(dimension_));
    }
    for (double v : vec) {
      if (!std::isfinite(v)) {
        throw NumericError("VectorStore: non-finite entry in vector for '" + doc_id + "'");
      }
    }
    if (!index_.emplace(doc_id, ids_.size()).second) {
      throw ValidationError("VectorStore: duplicate id '" + doc_id + "'");
    }
    ids_.push_back(doc_id);
    vectors_.push_back(std::move(vec));
  }

  // Top-k by cosine, descending; ties broken by ascending doc id so every
  // ranking is a total order and mining stays reproducible.
  std::vector<RetrievalResult> search(const EmbeddingVector& query_vec,
                                      std::size_t top_k) const {
    if (query_vec.size() != dimension_) {
      throw ValidationError("search: query dimension " + std::to_string(query_vec.size()) +
                            " does not match store dimension " + std::to_string(dimension_));
    }
    if (top_k == 0) throw ValidationError("search: top_k must be positive");

    std::vector<double> scores(vectors_.size());
    for (std::size_t i = 0; i < vectors_.size(); ++i) {
      scores[i] = cosine(query_vec, vectors_[i]);
    }
    std::vector<std::size_t> order(vectors_.size());
    std::iota(order.begin(), order.end(), 0);
    auto better = [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return ids_[a] < ids_[b];
    };
    std::size_t k = std::min(top_k, order.size());
    std::partial_sort(order.begin(), order.begin() + k, order.end(), better);

    std::vector<RetrievalResult> results;
    results.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
      results.push_back({ids_[order[i]], scores[order[i]]});
    }
    return results;
  }

  // Binary snapshot: "RVS1", u32 dimension, u64 count, then per entry
  // u32 id length, id bytes, dimension little-endian f64 values.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out.write("RVS1", 4);
    write_u32(out, static_cast<std::uint32_t>(dimension_));
    write_u64(out, static_cast<std::uint64_t>(ids_.size()));
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      write_u32(out, static_cast<std::uint32_t>(ids_[i].size()));
      out.write(ids_[i].data(), static_cast<std::streamsize>(ids_[i].size()));
      for (double v : vectors_[i]) write_f64(out, v);
    }
    if (!out) throw IoError("write failed for " + path);
  }

  static VectorStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "RVS1", 4) != 0) {
      throw ParseError(path + ": not a vector store snapshot");
    }
    std::uint32_t dim = read_u32(in, path);
    std::uint64_t count = read_u64(in, path);
    VectorStore store(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint32_t id_len = read_u32(in, path);
      std::string id(id_len, '\0');
      in.read(id.data(), id_len);
      if (!in) throw ParseError(path + ": truncated id at entry " + std::to_string(i));
      EmbeddingVector vec(dim);
      for (std::uint32_t d = 0; d < dim; ++d) vec[d] = read_f64(in, path);
      store.insert(id, std::move(vec));
    }
    return store;
  }

  json debug_dump() const {
    json entries = json::array();
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      entries.push_back({{"id", ids_[i]}, {"values", vectors_[i]}});
    }
    return json{{"dimension", dimension_}, {"count", ids_.size()}, {"entries", entries}};
  }

private:
  static void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  static void write_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
  }
  static void write_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(out, bits);
  }
  static std::uint32_t read_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ParseError(path + ": truncated snapshot");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static std::uint64_t read_u64(std::istream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw ParseError(path + ": truncated snapshot");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  static double read_f64(std::istream& in, const std::string& path) {
    std::uint64_t bits = read_u64(in, path);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::size_t dimension_;
  std::vector<std::string> ids_;
  std::vector<EmbeddingVector> vectors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Embeds every document and builds a store; one entry per document.
inline VectorStore ingest(const std::vector<Document>& docs, const EmbedFn& embed,
                          unsigned threads = 1) {
  if (docs.empty()) throw ValidationError("ingest: empty document list");
  std::vector<EmbeddingVector> vecs(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t i) { vecs[i] = embed(docs[i].text); });

  VectorStore store(vecs[0].size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    store.insert(docs[i].id, std::move(vecs[i]));
  }
  return store;
}

}  // namespace refine
