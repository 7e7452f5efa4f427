#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "refine/corpus.hpp"
#include "refine/errors.hpp"
#include "refine/parallel.hpp"
#include "refine/vectorstore.hpp"

namespace refine {

namespace detail {

inline void require_metric_args(const std::set<std::string>& relevant, int k) {
  if (relevant.empty()) throw ValidationError("metric undefined for an empty relevant set");
  if (k < 1) throw ValidationError("metric cutoff k must be >= 1");
}

}  // namespace detail

// Mean of precision@i over the relevant documents found in the top k,
// normalized by the total number of relevant documents. With one relevant
// document this reduces to 1/rank when it appears within the cutoff.
inline double average_precision_at_k(const std::vector<std::string>& ranked,
                                     const std::set<std::string>& relevant, int k) {
  detail::require_metric_args(relevant, k);
  const std::size_t depth = std::min(ranked.size(), static_cast<std::size_t>(k));
  double hits = 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (relevant.count(ranked[i])) {
      hits += 1.0;
      sum += hits / static_cast<double>(i + 1);
    }
  }
  return sum / static_cast<double>(relevant.size());
}

// Binary-gain DCG against the ideal ordering: gain 1 at 1-indexed rank i is
// discounted by 1/log2(i + 1); the ideal places relevant documents in the
// first min(k, |relevant|) ranks.
inline double ndcg_at_k(const std::vector<std::string>& ranked,
                        const std::set<std::string>& relevant, int k) {
  detail::require_metric_args(relevant, k);
  const std::size_t depth = std::min(ranked.size(), static_cast<std::size_t>(k));
  double dcg = 0.0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (relevant.count(ranked[i])) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
  }
  const std::size_t ideal = std::min(static_cast<std::size_t>(k), relevant.size());
  double idcg = 0.0;
  for (std::size_t i = 0; i < ideal; ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
  return dcg / idcg;
}

inline double mrr_at_k(const std::vector<std::string>& ranked,
                       const std::set<std::string>& relevant, int k) {
  detail::require_metric_args(relevant, k);
  const std::size_t depth = std::min(ranked.size(), static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < depth; ++i) {
    if (relevant.count(ranked[i])) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

inline double recall_at_k(const std::vector<std::string>& ranked,
                          const std::set<std::string>& relevant, int k) {
  detail::require_metric_args(relevant, k);
  const std::size_t depth = std::min(ranked.size(), static_cast<std::size_t>(k));
  std::size_t found = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (relevant.count(ranked[i])) ++found;
  }
  return static_cast<double>(found) / static_cast<double>(relevant.size());
}

struct KMetrics {
  double map = 0.0;
  double ndcg = 0.0;
  double mrr = 0.0;
  double recall = 0.0;
};

struct MetricsReport {
  std::map<int, KMetrics> per_k;
  std::size_t num_queries = 0;
  std::string mode;
  std::string config_hash;
};

// Retrieval quality of an embedding over a labeled query set. Each query is
// searched once at depth max(ks); all four metrics are then read off the one
// ranked list per cutoff and averaged over queries.
inline MetricsReport evaluate(const std::vector<Query>& queries, const VectorStore& store,
                              const EmbedFn& embed, const std::vector<int>& ks,
                              unsigned threads = 1) {
  if (queries.empty()) throw ValidationError("evaluate: empty query set");
  if (ks.empty()) throw ValidationError("evaluate: empty cutoff list");
  for (int k : ks) {
    if (k < 1) throw ValidationError("evaluate: cutoffs must be >= 1");
  }

  std::string offenders;
  for (const auto& q : queries) {
    bool bad = q.gold_doc_ids.empty();
    for (const auto& g : q.gold_doc_ids) bad = bad || !store.contains(g);
    if (bad) offenders += offenders.empty() ? q.id : ", " + q.id;
  }
  if (!offenders.empty()) {
    throw ValidationError("evaluate: queries with missing or unknown gold documents: " +
                          offenders);
  }

  const int max_k = *std::max_element(ks.begin(), ks.end());
  std::vector<std::map<int, KMetrics>> per_query(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    const Query& q = queries[i];
    auto results = store.search(embed(q.text), static_cast<std::size_t>(max_k));
    std::vector<std::string> ranked;
    ranked.reserve(results.size());
    for (const auto& r : results) ranked.push_back(r.doc_id);
    const std::set<std::string> relevant(q.gold_doc_ids.begin(), q.gold_doc_ids.end());
    for (int k : ks) {
      per_query[i][k] = {average_precision_at_k(ranked, relevant, k),
                         ndcg_at_k(ranked, relevant, k), mrr_at_k(ranked, relevant, k),
                         recall_at_k(ranked, relevant, k)};
    }
  });

  MetricsReport report;
  report.num_queries = queries.size();
  const double n = static_cast<double>(queries.size());
  for (int k : ks) {
    KMetrics agg;
    for (const auto& pq : per_query) {
      const KMetrics& m = pq.at(k);
      agg.map += m.map;
      agg.ndcg += m.ndcg;
      agg.mrr += m.mrr;
      agg.recall += m.recall;
    }
    report.per_k[k] = {agg.map / n, agg.ndcg / n, agg.mrr / n, agg.recall / n};
  }
  return report;
}

inline json metrics_to_json(const MetricsReport& report) {
  json per_k = json::object();
  for (const auto& [k, m] : report.per_k) {
    per_k[std::to_string(k)] =
        json{{"map", m.map}, {"ndcg", m.ndcg}, {"mrr", m.mrr}, {"recall", m.recall}};
  }
  return json{{"per_k", per_k},
              {"num_queries", report.num_queries},
              {"mode", report.mode},
              {"config_hash", report.config_hash}};
}

inline MetricsReport metrics_from_json(const json& j) {
  MetricsReport report;
  report.num_queries = j.at("num_queries").get<std::size_t>();
  report.mode = j.at("mode").get<std::string>();
  report.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& [key, m] : j.at("per_k").items()) {
    int k = 0;
    try {
      k = std::stoi(key);
    } catch (const std::exception&) {
      throw ParseError("metrics: non-integer cutoff key '" + key + "'");
    }
    report.per_k[k] = {m.at("map").get<double>(), m.at("ndcg").get<double>(),
                       m.at("mrr").get<double>(), m.at("recall").get<double>()};
  }
  return report;
}

// Comparison grid: one row per report (mode), one column per metric@k.
inline std::string metrics_markdown(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw ValidationError("metrics_markdown: no reports");
  std::vector<int> ks;
  for (const auto& [k, m] : reports.front().per_k) ks.push_back(k);
  for (const auto& r : reports) {
    if (r.per_k.size() != ks.size()) {
      throw ValidationError("metrics_markdown: reports use different cutoffs");
    }
    for (int k : ks) {
      if (!r.per_k.count(k)) {
        throw ValidationError("metrics_markdown: reports use different cutoffs");
      }
    }
  }

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return std::string(buf);
  };

  std::string out = "| mode |";
  std::string rule = "| --- |";
  for (int k : ks) {
    const std::string suffix = "@" + std::to_string(k);
    out += " MAP" + suffix + " | NDCG" + suffix + " | MRR" + suffix + " | Recall" + suffix + " |";
    rule += " --- | --- | --- | --- |";
  }
  out += "\n" + rule + "\n";
  for (const auto& r : reports) {
    out += "| " + (r.mode.empty() ? std::string("?") : r.mode) + " |";
    for (int k : ks) {
      const KMetrics& m = r.per_k.at(k);
      out += " " + fmt(m.map) + " | " + fmt(m.ndcg) + " | " + fmt(m.mrr) + " | " +
             fmt(m.recall) + " |";
    }
    out += "\n";
  }
  return out;
}

}  // namespace refine
