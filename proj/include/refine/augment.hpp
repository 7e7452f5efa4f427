#pragma once

#include <cstddef>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "refine/corpus.hpp"
#include "refine/errors.hpp"
#include "refine/parallel.hpp"
#include "refine/querygen.hpp"
#include "refine/vectorstore.hpp"

namespace refine {

struct NegativeMiningConfig {
  int retrieve_depth = 50;
  double band_low = 0.5;        // raw cosine, inclusive
  double band_high = 0.7;       // raw cosine, inclusive
  int exclude_top = 5;
  int negatives_per_query = 5;
  int fallback_rank_lo = 6;     // 1-indexed, inclusive
  int fallback_rank_hi = 15;

  void validate() const {
    if (retrieve_depth < 1) throw ValidationError("mining: retrieve_depth must be >= 1");
    if (!(band_low < band_high)) throw ValidationError("mining: band_low must be < band_high");
    if (exclude_top < 0 || exclude_top >= retrieve_depth) {
      throw ValidationError("mining: exclude_top must be in [0, retrieve_depth)");
    }
    if (negatives_per_query < 1 ||
        negatives_per_query > retrieve_depth - exclude_top) {
      throw ValidationError(
          "mining: negatives_per_query must be in [1, retrieve_depth - exclude_top]");
    }
    if (fallback_rank_lo < 1 || fallback_rank_hi < fallback_rank_lo) {
      throw ValidationError("mining: invalid fallback rank window");
    }
  }
};

// Hard negatives for one query: retrieved documents outside the top
// `exclude_top`, inside the similarity band, never the positive, taken in
// descending-score order up to m. An empty band falls back to the fixed
// rank window; an empty fallback yields an empty list and the caller drops
// the triple.
inline std::vector<std::string> select_negatives(const EmbeddingVector& query_vec,
                                                 const VectorStore& store,
                                                 const std::string& positive_id,
                                                 const NegativeMiningConfig& cfg,
                                                 bool* used_fallback = nullptr) {
  cfg.validate();
  if (!store.contains(positive_id)) {
    throw ValidationError("select_negatives: positive '" + positive_id + "' not in store");
  }
  if (used_fallback) *used_fallback = false;

  auto results = store.search(query_vec, static_cast<std::size_t>(cfg.retrieve_depth));
  const std::size_t m = static_cast<std::size_t>(cfg.negatives_per_query);

  std::vector<std::string> negatives;
  for (std::size_t i = 0; i < results.size() && negatives.size() < m; ++i) {
    const std::size_t rank = i + 1;
    if (rank <= static_cast<std::size_t>(cfg.exclude_top)) continue;
    if (results[i].doc_id == positive_id) continue;
    if (results[i].score < cfg.band_low || results[i].score > cfg.band_high) continue;
    negatives.push_back(results[i].doc_id);
  }
  if (!negatives.empty()) return negatives;

  for (std::size_t i = 0; i < results.size() && negatives.size() < m; ++i) {
    const std::size_t rank = i + 1;
    if (rank < static_cast<std::size_t>(cfg.fallback_rank_lo)) continue;
    if (rank > static_cast<std::size_t>(cfg.fallback_rank_hi)) break;
    if (results[i].doc_id == positive_id) continue;
    negatives.push_back(results[i].doc_id);
  }
  if (used_fallback && !negatives.empty()) *used_fallback = true;
  return negatives;
}

struct MiningReport {
  std::size_t documents = 0;
  std::size_t queries_generated = 0;
  std::size_t triples_emitted = 0;
  std::size_t band_fallbacks = 0;
  std::size_t dropped_queries = 0;
  std::vector<std::string> failed_docs;
  std::vector<std::string> failure_messages;

  json to_json() const {
    return json{{"documents", documents},
                {"queries_generated", queries_generated},
                {"triples_emitted", triples_emitted},
                {"band_fallbacks", band_fallbacks},
                {"dropped_queries", dropped_queries},
                {"failed_docs", failed_docs},
                {"failure_messages", failure_messages}};
  }
};

struct DatasetBuild {
  std::vector<TrainingTriple> triples;
  MiningReport report;
};

// End-to-end augmentation: ingest documents with the frozen embedding,
// generate queries per document, mine negatives per query, and emit triples
// in (document order, query order). Generation failures are recorded per
// document without aborting the build.
inline DatasetBuild build_dataset(const std::vector<Document>& docs, const GenConfig& gen_cfg,
                                  const NegativeMiningConfig& mine_cfg, const EmbedFn& embed,
                                  unsigned threads = 1) {
  if (docs.empty()) throw ValidationError("build_dataset: empty corpus");
  gen_cfg.validate();
  mine_cfg.validate();

  VectorStore store = ingest(docs, embed, threads);

  std::vector<std::vector<Query>> generated(docs.size());
  std::vector<std::string> errors(docs.size());
  parallel_for(docs.size(), threads, [&](std::size_t i) {
    try {
      generated[i] = generate_queries(docs[i], gen_cfg);
    } catch (const TransportError& e) {
      errors[i] = e.what();
    } catch (const GenerationError& e) {
      errors[i] = e.what();
    }
  });

  DatasetBuild build;
  build.report.documents = docs.size();
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (!errors[i].empty()) {
      build.report.failed_docs.push_back(docs[i].id);
      build.report.failure_messages.push_back(errors[i]);
      continue;
    }
    build.report.queries_generated += generated[i].size();
    for (auto& q : generated[i]) {
      EmbeddingVector qvec = embed(q.text);
      bool fallback = false;
      auto negatives = select_negatives(qvec, store, docs[i].id, mine_cfg, &fallback);
      if (negatives.empty()) {
        ++build.report.dropped_queries;
        continue;
      }
      if (fallback) ++build.report.band_fallbacks;
      build.triples.push_back({std::move(q), docs[i].id, std::move(negatives)});
    }
  }
  build.report.triples_emitted = build.triples.size();
  if (build.report.dropped_queries > 0) {
    std::cerr << "[warn] dropped " << build.report.dropped_queries
              << " queries with no eligible negatives\n";
  }
  return build;
}

}  // namespace refine
