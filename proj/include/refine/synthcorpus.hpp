#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "refine/corpus.hpp"
#include "refine/errors.hpp"
#include "refine/rng.hpp"

namespace refine {

// Controls for a synthetic retrieval corpus. Every document owns a small
// private vocabulary slice; the rest of each document is drawn from a pool
// shared by all documents, so distractor_overlap dials how lexically
// confusable documents are (0 = disjoint vocabularies, near 1 = almost
// indistinguishable).
struct SynthSpec {
  std::size_t num_docs = 100;
  std::size_t vocab_size = 1200;
  std::size_t doc_len_lo = 130;
  std::size_t doc_len_hi = 170;
  double distractor_overlap = 0.9;
  std::uint64_t seed = 0;
  std::size_t private_tokens_per_doc = 8;
  std::size_t query_tokens = 3;

  void validate() const {
    if (num_docs == 0) throw ValidationError("synth: num_docs must be >= 1");
    if (doc_len_lo == 0 || doc_len_hi < doc_len_lo) {
      throw ValidationError("synth: invalid document length range");
    }
    if (!(distractor_overlap >= 0.0 && distractor_overlap < 1.0)) {
      throw ValidationError("synth: distractor_overlap must be in [0, 1)");
    }
    if (private_tokens_per_doc == 0) {
      throw ValidationError("synth: private_tokens_per_doc must be >= 1");
    }
    if (query_tokens == 0) throw ValidationError("synth: query_tokens must be >= 1");
    // One shared pool of at least one token plus a disjoint private slice
    // per document.
    const std::size_t needed = 1 + num_docs * private_tokens_per_doc;
    if (vocab_size < needed) {
      throw ValidationError("synth: vocab_size " + std::to_string(vocab_size) +
                            " too small; need at least " + std::to_string(needed) +
                            " for num_docs * private_tokens_per_doc plus a shared pool");
    }
  }
};

struct SynthCorpus {
  std::vector<Document> documents;
  std::vector<Query> queries;
};

namespace detail {

inline std::string synth_token(Rng& rng) {
  static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz";
  const std::size_t len = 6 + static_cast<std::size_t>(rng.below(4));
  std::string t;
  t.reserve(len);
  for (std::size_t i = 0; i < len; ++i) t.push_back(alphabet[rng.below(26)]);
  return t;
}

inline std::string padded_id(char prefix, std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%05zu", prefix, n);
  return std::string(buf);
}

}  // namespace detail

// Deterministic synthetic corpus: num_docs documents plus one gold-labeled
// query per document built from that document's private tokens. The same
// settings always produce byte-identical output.
inline SynthCorpus generate_corpus(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  // Unique vocabulary: the leading slice is the shared distractor pool, the
  // remainder is carved into per-document private slices.
  std::vector<std::string> vocab;
  vocab.reserve(spec.vocab_size);
  std::set<std::string> seen;
  while (vocab.size() < spec.vocab_size) {
    std::string t = detail::synth_token(rng);
    if (seen.insert(t).second) vocab.push_back(std::move(t));
  }
  const std::size_t shared_size = spec.vocab_size - spec.num_docs * spec.private_tokens_per_doc;

  SynthCorpus corpus;
  corpus.documents.reserve(spec.num_docs);
  corpus.queries.reserve(spec.num_docs);

  for (std::size_t doc = 0; doc < spec.num_docs; ++doc) {
    const std::size_t priv_base = shared_size + doc * spec.private_tokens_per_doc;
    const std::size_t len =
        spec.doc_len_lo + static_cast<std::size_t>(rng.below(spec.doc_len_hi - spec.doc_len_lo + 1));

    std::vector<std::size_t> positions(len);
    for (std::size_t i = 0; i < len; ++i) {
      const bool shared = rng.real() < spec.distractor_overlap;
      positions[i] = shared ? rng.below(shared_size)
                            : priv_base + rng.below(spec.private_tokens_per_doc);
    }
    // Guarantee enough distinct private tokens for the gold query even when
    // the overlap draw produced none.
    const std::size_t want =
        std::min(spec.query_tokens, spec.private_tokens_per_doc);
    std::set<std::size_t> present;
    for (std::size_t p : positions) {
      if (p >= priv_base && p < priv_base + spec.private_tokens_per_doc) present.insert(p);
    }
    std::size_t next_private = 0;
    std::size_t cursor = 0;
    while (present.size() < want && cursor < len) {
      while (next_private < spec.private_tokens_per_doc &&
             present.count(priv_base + next_private)) {
        ++next_private;
      }
      const std::size_t p = positions[cursor++];
      if (p >= priv_base && p < priv_base + spec.private_tokens_per_doc) continue;
      positions[cursor - 1] = priv_base + next_private;
      present.insert(priv_base + next_private);
    }

    std::string text;
    for (std::size_t i = 0; i < len; ++i) {
      if (i) text.push_back(' ');
      text += vocab[positions[i]];
    }
    const std::string doc_id = detail::padded_id('d', doc);
    corpus.documents.push_back({doc_id, std::move(text)});

    std::string query_text = "which document mentions";
    std::size_t used = 0;
    for (std::size_t p : present) {
      if (used == spec.query_tokens) break;
      query_text += " " + vocab[p];
      ++used;
    }
    Query q;
    q.id = detail::padded_id('q', doc);
    q.text = std::move(query_text);
    q.gold_doc_ids = {doc_id};
    corpus.queries.push_back(std::move(q));
  }
  return corpus;
}

}  // namespace refine
