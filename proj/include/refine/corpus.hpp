#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "refine/errors.hpp"
#include "refine/rng.hpp"

namespace refine {

using json = nlohmann::json;

// One text unit of the corpus. `text` is never empty.
struct Document {
  std::string id;
  std::string text;

  bool operator==(const Document&) const = default;
};

// A retrieval query. `source_doc_id` is set when the query was generated
// from a document; `gold_doc_ids` carries evaluation relevance labels.
struct Query {
  std::string id;
  std::string text;
  std::string source_doc_id;                // empty = unset
  std::vector<std::string> gold_doc_ids;

  bool operator==(const Query&) const = default;
};

// The contrastive training unit: a query, its positive document, and an
// ordered list of mined hard negatives.
struct TrainingTriple {
  Query query;
  std::string positive_doc_id;
  std::vector<std::string> negative_doc_ids;

  bool operator==(const TrainingTriple&) const = default;
};

struct SplitSpec {
  double validation_fraction = 0.15;
  std::uint64_t seed = 0;
};

namespace detail {

inline void visit_jsonl(const std::string& path,
                        const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    bool blank = true;
    for (char c : line) {
      if (c != ' ' && c != '\t' && c != '\r') { blank = false; break; }
    }
    if (blank) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ": line " + std::to_string(lineno) + ": " + e.what());
    }
    fn(record, lineno);
  }
}

inline std::string require_string(const json& record, const char* field,
                                  const std::string& path, std::size_t lineno) {
  if (!record.contains(field) || !record[field].is_string()) {
    throw ParseError(path + ": line " + std::to_string(lineno) +
                     ": missing string field '" + field + "'");
  }
  return record[field].get<std::string>();
}

}  // namespace detail

// Reads line-delimited JSON documents ({"id", "text"}), preserving file
// order. Duplicate ids and empty texts are rejected.
inline std::vector<Document> load_documents(const std::string& path) {
  std::vector<Document> docs;
  std::unordered_set<std::string> seen;
  detail::visit_jsonl(path, [&](const json& record, std::size_t lineno) {
    Document d;
    d.id = detail::require_string(record, "id", path, lineno);
    d.text = detail::require_string(record, "text", path, lineno);
    if (d.text.empty()) {
      throw ValidationError(path + ": line " + std::to_string(lineno) +
                            ": document '" + d.id + "' has empty text");
    }
    if (!seen.insert(d.id).second) {
      throw ValidationError(path + ": line " + std::to_string(lineno) +
                            ": duplicate document id '" + d.id + "'");
    }
    docs.push_back(std::move(d));
  });
  return docs;
}

inline void write_documents(const std::string& path,
                            const std::vector<Document>& docs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& d : docs) {
    json record{{"id", d.id}, {"text", d.text}};
    out << record.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

inline std::vector<Query> load_queries(const std::string& path) {
  std::vector<Query> queries;
  std::unordered_set<std::string> seen;
  detail::visit_jsonl(path, [&](const json& record, std::size_t lineno) {
    Query q;
    q.id = detail::require_string(record, "id", path, lineno);
    q.text = detail::require_string(record, "text", path, lineno);
    if (q.text.empty()) {
      throw ValidationError(path + ": line " + std::to_string(lineno) +
                            ": query '" + q.id + "' has empty text");
    }
    if (record.contains("source_doc_id") && !record["source_doc_id"].is_null()) {
      if (!record["source_doc_id"].is_string()) {
        throw ParseError(path + ": line " + std::to_string(lineno) +
                         ": 'source_doc_id' must be a string");
      }
      q.source_doc_id = record["source_doc_id"].get<std::string>();
    }
    if (record.contains("gold_doc_ids")) {
      if (!record["gold_doc_ids"].is_array()) {
        throw ParseError(path + ": line " + std::to_string(lineno) +
                         ": 'gold_doc_ids' must be an array");
      }
      std::unordered_set<std::string> gold_seen;
      for (const auto& g : record["gold_doc_ids"]) {
        if (!g.is_string()) {
          throw ParseError(path + ": line " + std::to_string(lineno) +
                           ": 'gold_doc_ids' entries must be strings");
        }
        auto id = g.get<std::string>();
        if (gold_seen.insert(id).second) q.gold_doc_ids.push_back(std::move(id));
      }
    }
    if (!seen.insert(q.id).second) {
      throw ValidationError(path + ": line " + std::to_string(lineno) +
                            ": duplicate query id '" + q.id + "'");
    }
    queries.push_back(std::move(q));
  });
  return queries;
}

inline void write_queries(const std::string& path,
                          const std::vector<Query>& queries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& q : queries) {
    json record{{"id", q.id}, {"text", q.text}, {"gold_doc_ids", q.gold_doc_ids}};
    if (!q.source_doc_id.empty()) record["source_doc_id"] = q.source_doc_id;
    out << record.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

// Triple records: {"query_id", "query_text", "positive_doc_id",
// "negative_doc_ids"}. The positive doubles as the query's source document.
inline std::vector<TrainingTriple> load_triples(const std::string& path) {
  std::vector<TrainingTriple> triples;
  detail::visit_jsonl(path, [&](const json& record, std::size_t lineno) {
    TrainingTriple t;
    t.query.id = detail::require_string(record, "query_id", path, lineno);
    t.query.text = detail::require_string(record, "query_text", path, lineno);
    t.positive_doc_id = detail::require_string(record, "positive_doc_id", path, lineno);
    t.query.source_doc_id = t.positive_doc_id;
    if (!record.contains("negative_doc_ids") || !record["negative_doc_ids"].is_array()) {
      throw ParseError(path + ": line " + std::to_string(lineno) +
                       ": missing array field 'negative_doc_ids'");
    }
    std::unordered_set<std::string> neg_seen;
    for (const auto& n : record["negative_doc_ids"]) {
      if (!n.is_string()) {
        throw ParseError(path + ": line " + std::to_string(lineno) +
                         ": 'negative_doc_ids' entries must be strings");
      }
      auto id = n.get<std::string>();
      if (id == t.positive_doc_id) {
        throw ValidationError(path + ": line " + std::to_string(lineno) +
                              ": positive '" + id + "' listed among negatives");
      }
      if (!neg_seen.insert(id).second) {
        throw ValidationError(path + ": line " + std::to_string(lineno) +
                              ": duplicate negative id '" + id + "'");
      }
      t.negative_doc_ids.push_back(std::move(id));
    }
    triples.push_back(std::move(t));
  });
  return triples;
}

inline void write_triples(const std::string& path,
                          const std::vector<TrainingTriple>& triples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& t : triples) {
    json record{{"query_id", t.query.id},
                {"query_text", t.query.text},
                {"positive_doc_id", t.positive_doc_id},
                {"negative_doc_ids", t.negative_doc_ids}};
    out << record.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path);
}

inline std::unordered_set<std::string> corpus_ids(const std::vector<Document>& docs) {
  std::unordered_set<std::string> ids;
  ids.reserve(docs.size());
  for (const auto& d : docs) ids.insert(d.id);
  return ids;
}

// Cross-checks query provenance and gold labels against a corpus.
inline void validate_queries(const std::vector<Query>& queries,
                             const std::vector<Document>& docs) {
  auto ids = corpus_ids(docs);
  for (const auto& q : queries) {
    if (!q.source_doc_id.empty() && !ids.count(q.source_doc_id)) {
      throw ValidationError("query '" + q.id + "' references unknown source document '" +
                            q.source_doc_id + "'");
    }
    for (const auto& g : q.gold_doc_ids) {
      if (!ids.count(g)) {
        throw ValidationError("query '" + q.id + "' has unknown gold document '" + g + "'");
      }
    }
  }
}

inline void validate_triples(const std::vector<TrainingTriple>& triples,
                             const std::vector<Document>& docs) {
  auto ids = corpus_ids(docs);
  for (const auto& t : triples) {
    if (!ids.count(t.positive_doc_id)) {
      throw ValidationError("triple for query '" + t.query.id +
                            "' has unknown positive document '" + t.positive_doc_id + "'");
    }
    for (const auto& n : t.negative_doc_ids) {
      if (!ids.count(n)) {
        throw ValidationError("triple for query '" + t.query.id +
                              "' has unknown negative document '" + n + "'");
      }
    }
  }
}

// Deterministic grouped train/validation split. All triples sharing one
// source document land in the same partition so near-duplicate queries from
// a document cannot leak across the boundary. The validation side is filled
// with whole groups up to floor(fraction * N) triples; with uniform group
// sizes that divide the target the size is hit exactly.
inline std::pair<std::vector<TrainingTriple>, std::vector<TrainingTriple>>
split_triples(const std::vector<TrainingTriple>& triples, const SplitSpec& spec) {
  if (triples.empty()) throw ValidationError("split_triples: no triples");
  if (spec.validation_fraction < 0.0 || spec.validation_fraction >= 1.0) {
    throw ValidationError("split_triples: validation_fraction must be in [0, 1)");
  }

  const std::size_t target = static_cast<std::size_t>(
      spec.validation_fraction * static_cast<double>(triples.size()));

  // Group keys in first-appearance order, then a seeded shuffle.
  std::vector<std::string> group_order;
  std::unordered_map<std::string, std::size_t> group_sizes;
  for (const auto& t : triples) {
    const std::string& key =
        t.query.source_doc_id.empty() ? t.positive_doc_id : t.query.source_doc_id;
    auto [it, inserted] = group_sizes.try_emplace(key, 0);
    if (inserted) group_order.push_back(key);
    ++it->second;
  }
  Rng rng(spec.seed);
  rng.shuffle(group_order);

  std::unordered_set<std::string> validation_groups;
  std::size_t validation_count = 0;
  for (const auto& key : group_order) {
    std::size_t size = group_sizes[key];
    if (validation_count + size <= target) {
      validation_groups.insert(key);
      validation_count += size;
    }
  }

  std::vector<TrainingTriple> train, validation;
  train.reserve(triples.size() - validation_count);
  validation.reserve(validation_count);
  for (const auto& t : triples) {
    const std::string& key =
        t.query.source_doc_id.empty() ? t.positive_doc_id : t.query.source_doc_id;
    (validation_groups.count(key) ? validation : train).push_back(t);
  }
  return {std::move(train), std::move(validation)};
}

}  // namespace refine
