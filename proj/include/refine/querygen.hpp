#pragma once

#include <cctype>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_set>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "refine/corpus.hpp"
#include "refine/errors.hpp"
#include "refine/rng.hpp"

namespace refine {

struct GenConfig {
  int queries_per_doc = 10;
  std::string prompt_template =
      "You are a query generator bot. Generate {count} distinct queries from "
      "the document\n{document}";
  std::string endpoint;      // chat-completions URL; empty means offline only
  std::string model_name;
  int timeout_ms = 30000;
  int max_retries = 3;
  int retry_backoff_ms = 250;
  double temperature = 0.7;
  std::uint64_t seed = 0;    // offline mode
  std::string api_key_env = "REFINE_API_KEY";

  void validate() const {
    if (queries_per_doc < 1) {
      throw ValidationError("generation: queries_per_doc must be >= 1");
    }
    std::size_t first = prompt_template.find("{document}");
    if (first == std::string::npos ||
        prompt_template.find("{document}", first + 1) != std::string::npos) {
      throw ValidationError(
          "generation: prompt template must contain exactly one {document} placeholder");
    }
    if (max_retries < 0) throw ValidationError("generation: max_retries must be >= 0");
  }
};

// Lowercases ASCII, collapses whitespace runs, trims. Used only to decide
// distinctness; emitted queries keep their original text.
inline std::string normalize_query_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v') {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

// Extracts items from numbered ("1.", "1)") or bulleted ("-", "*", "•")
// lines; everything else is ignored.
inline std::vector<std::string> parse_numbered_list(std::string_view raw) {
  std::vector<std::string> items;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    std::size_t eol = raw.find('\n', pos);
    std::string_view line = raw.substr(pos, eol == std::string_view::npos ? raw.size() - pos
                                                                          : eol - pos);
    pos = (eol == std::string_view::npos) ? raw.size() + 1 : eol + 1;

    auto trim = [](std::string_view s) {
      while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
      }
      while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
      }
      return s;
    };
    line = trim(line);
    if (line.empty()) continue;

    std::string_view rest;
    std::size_t digits = 0;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) {
      ++digits;
    }
    if (digits > 0 && digits < line.size() &&
        (line[digits] == '.' || line[digits] == ')')) {
      rest = line.substr(digits + 1);
    } else if (line.front() == '-' || line.front() == '*') {
      rest = line.substr(1);
    } else if (line.size() >= 3 && line.substr(0, 3) == "•") {
      rest = line.substr(3);
    } else {
      continue;
    }
    rest = trim(rest);
    if (!rest.empty()) items.emplace_back(rest);
  }
  return items;
}

inline std::string render_prompt(const GenConfig& cfg, const Document& doc) {
  std::string prompt = cfg.prompt_template;
  std::size_t at = prompt.find("{count}");
  if (at != std::string::npos) {
    prompt.replace(at, 7, std::to_string(cfg.queries_per_doc));
  }
  at = prompt.find("{document}");
  prompt.replace(at, 10, doc.text);
  return prompt;
}

namespace detail {

// Dedup (case-folded, whitespace-normalized), drop verbatim copies of the
// document, cap at k, and attach provenance ids.
inline std::vector<Query> finalize_queries(const Document& doc,
                                           const std::vector<std::string>& raw,
                                           const GenConfig& cfg) {
  std::vector<Query> out;
  std::unordered_set<std::string> seen;
  std::string doc_norm = normalize_query_text(doc.text);
  for (const auto& text : raw) {
    if (static_cast<int>(out.size()) >= cfg.queries_per_doc) break;
    if (text.empty() || text == doc.text) continue;
    std::string key = normalize_query_text(text);
    if (key.empty() || key == doc_norm) continue;
    if (!seen.insert(key).second) continue;
    Query q;
    q.id = doc.id + "-q" + std::to_string(out.size() + 1);
    q.text = text;
    q.source_doc_id = doc.id;
    out.push_back(std::move(q));
  }
  return out;
}

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

}  // namespace detail

// Deterministic generator: seeded word spans from the document recombined
// into interrogative templates. A pure function of (text, seed, k).
inline std::vector<Query> generate_queries_offline(const Document& doc, const GenConfig& cfg) {
  cfg.validate();
  if (doc.text.empty()) throw ValidationError("generate_queries: empty document text");

  static const char* kTemplates[] = {
      "What does the document say about {}?",
      "How is {} described?",
      "Which part discusses {}?",
      "What details are given for {}?",
      "Why is {} mentioned?",
      "Where does {} appear?",
      "What is the role of {}?",
      "What can be learned about {}?",
  };
  constexpr std::size_t kNumTemplates = sizeof(kTemplates) / sizeof(kTemplates[0]);

  std::vector<std::string> words = detail::split_words(doc.text);
  Rng rng(hash_combine(hash_text(doc.text), cfg.seed));

  std::vector<std::string> raw;
  const int k = cfg.queries_per_doc;
  const std::size_t attempts = static_cast<std::size_t>(k) * 16 + 8;
  for (std::size_t a = 0; a < attempts && static_cast<int>(raw.size()) < 4 * k; ++a) {
    std::string span;
    if (words.empty()) {
      span = doc.text;
    } else {
      std::size_t max_len = std::min<std::size_t>(4, words.size());
      std::size_t len = 1 + rng.index(max_len);
      std::size_t start = rng.index(words.size() - len + 1);
      for (std::size_t w = 0; w < len; ++w) {
        if (w > 0) span.push_back(' ');
        span += words[start + w];
      }
    }
    std::string tmpl = kTemplates[rng.index(kNumTemplates)];
    std::size_t at = tmpl.find("{}");
    tmpl.replace(at, 2, span);
    raw.push_back(std::move(tmpl));
  }

  std::vector<Query> queries = detail::finalize_queries(doc, raw, cfg);
  if (queries.empty()) {
    throw GenerationError("offline generator produced no queries for document '" + doc.id + "'");
  }
  if (static_cast<int>(queries.size()) < k) {
    std::cerr << "[warn] document '" << doc.id << "': generated " << queries.size()
              << " of " << k << " requested queries\n";
  }
  return queries;
}

namespace detail {

struct EndpointParts {
  std::string base;  // scheme://host[:port]
  std::string path;  // leading slash
};

inline EndpointParts split_endpoint(const std::string& url) {
  std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("generation: endpoint must be an http(s) URL, got '" + url + "'");
  }
  std::size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {url, "/v1/chat/completions"};
  }
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// One chat-completion POST per document, with retries. Reads the first
// choice's message content and parses it as a numbered list.
inline std::vector<Query> generate_queries_llm(const Document& doc, const GenConfig& cfg) {
  cfg.validate();
  if (doc.text.empty()) throw ValidationError("generate_queries: empty document text");
  if (cfg.endpoint.empty()) throw ValidationError("generation: no endpoint configured");

  auto parts = detail::split_endpoint(cfg.endpoint);
  json body{{"model", cfg.model_name},
            {"messages", json::array({json{{"role", "user"},
                                           {"content", render_prompt(cfg, doc)}}})},
            {"temperature", cfg.temperature}};

  httplib::Headers headers;
  if (const char* key = std::getenv(cfg.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  std::string content;
  std::string last_error;
  bool ok = false;
  for (int attempt = 0; attempt <= cfg.max_retries && !ok; ++attempt) {
    if (attempt > 0 && cfg.retry_backoff_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(cfg.retry_backoff_ms * attempt));
    }
    httplib::Client client(parts.base);
    client.set_connection_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
    client.set_read_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
    auto res = client.Post(parts.path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "connection failed (" + httplib::to_string(res.error()) + ")";
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      json reply = json::parse(res->body);
      content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
      ok = true;
    } catch (const json::exception& e) {
      throw GenerationError("document '" + doc.id + "': unparseable completion response: " +
                            e.what());
    }
  }
  if (!ok) {
    throw TransportError("document '" + doc.id + "': endpoint '" + cfg.endpoint +
                         "' failed after " + std::to_string(cfg.max_retries + 1) +
                         " attempts: " + last_error);
  }

  std::vector<Query> queries = detail::finalize_queries(doc, parse_numbered_list(content), cfg);
  if (queries.empty()) {
    throw GenerationError("document '" + doc.id + "': response contained no usable queries");
  }
  if (static_cast<int>(queries.size()) < cfg.queries_per_doc) {
    std::cerr << "[warn] document '" << doc.id << "': generated " << queries.size()
              << " of " << cfg.queries_per_doc << " requested queries\n";
  }
  return queries;
}

inline std::vector<Query> generate_queries(const Document& doc, const GenConfig& cfg) {
  if (cfg.endpoint.empty()) return generate_queries_offline(doc, cfg);
  return generate_queries_llm(doc, cfg);
}

}  // namespace refine
