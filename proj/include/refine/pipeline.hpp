#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "refine/augment.hpp"
#include "refine/corpus.hpp"
#include "refine/encoder.hpp"
#include "refine/errors.hpp"
#include "refine/evaluator.hpp"
#include "refine/querygen.hpp"
#include "refine/rng.hpp"
#include "refine/synthcorpus.hpp"
#include "refine/trainer.hpp"
#include "refine/vectorstore.hpp"

namespace refine {

struct PipelinePaths {
  std::string documents;
  std::string queries;
  std::string output_dir;
};

// One configuration object drives every command. A single root seed derives
// all module seeds by fixed offsets (featurizer +1, generation +2, split +3,
// training +4, synthesis +5) so any stage can be re-run in isolation and
// reproduce. The fusion weight is likewise a single knob: training and
// checkpoints both read fusion.lambda.
struct PipelineConfig {
  std::uint64_t seed = 42;
  unsigned threads = 1;
  PipelinePaths paths;
  FrozenFeaturizer featurizer;
  GenConfig generation;
  NegativeMiningConfig mining;
  SplitSpec split;
  TrainConfig train;
  FusionConfig fusion;
  std::vector<int> eval_ks = {1, 2, 3, 4, 5};
  SynthSpec synth;

  // Applies the seed-offset derivation and cross-field propagation. Safe to
  // call repeatedly.
  void finalize() {
    featurizer.hash_seed = seed + 1;
    generation.seed = seed + 2;
    split.seed = seed + 3;
    train.seed = seed + 4;
    synth.seed = seed + 5;
    train.lambda = fusion.lambda;
    train.threads = threads;
  }

  void validate() const {
    featurizer.validate();
    generation.validate();
    mining.validate();
    train.validate();
    fusion.validate();
    synth.validate();
    if (split.validation_fraction < 0.0 || split.validation_fraction >= 1.0) {
      throw ValidationError("split: validation_fraction must be in [0, 1)");
    }
    if (eval_ks.empty()) throw ValidationError("evaluation: ks must be non-empty");
    for (int k : eval_ks) {
      if (k < 1) throw ValidationError("evaluation: ks entries must be >= 1");
    }
  }

  json to_json(bool include_paths = true) const {
    json j{{"seed", seed},
           {"threads", threads},
           {"featurizer",
            {{"dimension", featurizer.dimension},
             {"ngram_lo", featurizer.ngram_lo},
             {"ngram_hi", featurizer.ngram_hi}}},
           {"generation",
            {{"queries_per_doc", generation.queries_per_doc},
             {"prompt_template", generation.prompt_template},
             {"endpoint", generation.endpoint},
             {"model_name", generation.model_name},
             {"timeout_ms", generation.timeout_ms},
             {"max_retries", generation.max_retries},
             {"retry_backoff_ms", generation.retry_backoff_ms},
             {"temperature", generation.temperature},
             {"api_key_env", generation.api_key_env}}},
           {"mining",
            {{"retrieve_depth", mining.retrieve_depth},
             {"band_low", mining.band_low},
             {"band_high", mining.band_high},
             {"exclude_top", mining.exclude_top},
             {"negatives_per_query", mining.negatives_per_query},
             {"fallback_rank_lo", mining.fallback_rank_lo},
             {"fallback_rank_hi", mining.fallback_rank_hi}}},
           {"split", {{"validation_fraction", split.validation_fraction}}},
           {"train",
            {{"mode", to_string(train.mode)},
             {"learning_rate", train.learning_rate},
             {"temperature", train.temperature},
             {"grad_accum_steps", train.grad_accum_steps},
             {"epochs", train.epochs},
             {"batch_size", train.batch_size},
             {"cocktail_merge_weight", train.cocktail_merge_weight}}},
           {"fusion", {{"lambda", fusion.lambda}}},
           {"evaluation", {{"ks", eval_ks}}},
           {"synth",
            {{"num_docs", synth.num_docs},
             {"vocab_size", synth.vocab_size},
             {"doc_len_lo", synth.doc_len_lo},
             {"doc_len_hi", synth.doc_len_hi},
             {"distractor_overlap", synth.distractor_overlap},
             {"private_tokens_per_doc", synth.private_tokens_per_doc},
             {"query_tokens", synth.query_tokens}}}};
    if (include_paths) {
      j["paths"] = {{"documents", paths.documents},
                    {"queries", paths.queries},
                    {"output_dir", paths.output_dir}};
    }
    return j;
  }
};

namespace detail {

inline void check_keys(const json& obj, std::initializer_list<const char*> allowed,
                       const std::string& context) {
  std::unordered_set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!ok.count(key)) {
      throw ValidationError("config: unknown key '" + context + key + "'");
    }
  }
}

template <typename T>
T field(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline PipelineConfig parse_config(const json& j) {
  if (!j.is_object()) throw ValidationError("config: top level must be a JSON object");
  detail::check_keys(j,
                     {"seed", "threads", "paths", "featurizer", "generation", "mining", "split",
                      "train", "fusion", "evaluation", "synth"},
                     "");
  PipelineConfig cfg;
  cfg.seed = detail::field<std::uint64_t>(j, "seed", cfg.seed);
  cfg.threads = detail::field<unsigned>(j, "threads", cfg.threads);
  if (cfg.threads == 0) throw ValidationError("config: threads must be >= 1");

  if (j.contains("paths")) {
    const json& p = j.at("paths");
    detail::check_keys(p, {"documents", "queries", "output_dir"}, "paths.");
    cfg.paths.documents = detail::field<std::string>(p, "documents", "");
    cfg.paths.queries = detail::field<std::string>(p, "queries", "");
    cfg.paths.output_dir = detail::field<std::string>(p, "output_dir", "");
  }
  if (j.contains("featurizer")) {
    const json& f = j.at("featurizer");
    detail::check_keys(f, {"dimension", "ngram_lo", "ngram_hi"}, "featurizer.");
    cfg.featurizer.dimension =
        detail::field<std::size_t>(f, "dimension", cfg.featurizer.dimension);
    cfg.featurizer.ngram_lo = detail::field<std::size_t>(f, "ngram_lo", cfg.featurizer.ngram_lo);
    cfg.featurizer.ngram_hi = detail::field<std::size_t>(f, "ngram_hi", cfg.featurizer.ngram_hi);
  }
  if (j.contains("generation")) {
    const json& g = j.at("generation");
    detail::check_keys(g,
                       {"queries_per_doc", "prompt_template", "endpoint", "model_name",
                        "timeout_ms", "max_retries", "retry_backoff_ms", "temperature",
                        "api_key_env"},
                       "generation.");
    cfg.generation.queries_per_doc =
        detail::field<int>(g, "queries_per_doc", cfg.generation.queries_per_doc);
    cfg.generation.prompt_template =
        detail::field<std::string>(g, "prompt_template", cfg.generation.prompt_template);
    cfg.generation.endpoint = detail::field<std::string>(g, "endpoint", cfg.generation.endpoint);
    cfg.generation.model_name =
        detail::field<std::string>(g, "model_name", cfg.generation.model_name);
    cfg.generation.timeout_ms = detail::field<int>(g, "timeout_ms", cfg.generation.timeout_ms);
    cfg.generation.max_retries = detail::field<int>(g, "max_retries", cfg.generation.max_retries);
    cfg.generation.retry_backoff_ms =
        detail::field<int>(g, "retry_backoff_ms", cfg.generation.retry_backoff_ms);
    cfg.generation.temperature =
        detail::field<double>(g, "temperature", cfg.generation.temperature);
    cfg.generation.api_key_env =
        detail::field<std::string>(g, "api_key_env", cfg.generation.api_key_env);
  }
  if (j.contains("mining")) {
    const json& m = j.at("mining");
    detail::check_keys(m,
                       {"retrieve_depth", "band_low", "band_high", "exclude_top",
                        "negatives_per_query", "fallback_rank_lo", "fallback_rank_hi"},
                       "mining.");
    cfg.mining.retrieve_depth =
        detail::field<int>(m, "retrieve_depth", cfg.mining.retrieve_depth);
    cfg.mining.band_low = detail::field<double>(m, "band_low", cfg.mining.band_low);
    cfg.mining.band_high = detail::field<double>(m, "band_high", cfg.mining.band_high);
    cfg.mining.exclude_top = detail::field<int>(m, "exclude_top", cfg.mining.exclude_top);
    cfg.mining.negatives_per_query =
        detail::field<int>(m, "negatives_per_query", cfg.mining.negatives_per_query);
    cfg.mining.fallback_rank_lo =
        detail::field<int>(m, "fallback_rank_lo", cfg.mining.fallback_rank_lo);
    cfg.mining.fallback_rank_hi =
        detail::field<int>(m, "fallback_rank_hi", cfg.mining.fallback_rank_hi);
  }
  if (j.contains("split")) {
    const json& s = j.at("split");
    detail::check_keys(s, {"validation_fraction"}, "split.");
    cfg.split.validation_fraction =
        detail::field<double>(s, "validation_fraction", cfg.split.validation_fraction);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    detail::check_keys(t,
                       {"mode", "learning_rate", "temperature", "grad_accum_steps", "epochs",
                        "batch_size", "cocktail_merge_weight"},
                       "train.");
    cfg.train.mode = parse_train_mode(detail::field<std::string>(t, "mode", "refine"));
    cfg.train.learning_rate =
        detail::field<double>(t, "learning_rate", cfg.train.learning_rate);
    cfg.train.temperature = detail::field<double>(t, "temperature", cfg.train.temperature);
    cfg.train.grad_accum_steps =
        detail::field<int>(t, "grad_accum_steps", cfg.train.grad_accum_steps);
    cfg.train.epochs = detail::field<int>(t, "epochs", cfg.train.epochs);
    cfg.train.batch_size = detail::field<int>(t, "batch_size", cfg.train.batch_size);
    cfg.train.cocktail_merge_weight =
        detail::field<double>(t, "cocktail_merge_weight", cfg.train.cocktail_merge_weight);
  }
  if (j.contains("fusion")) {
    const json& f = j.at("fusion");
    detail::check_keys(f, {"lambda"}, "fusion.");
    cfg.fusion.lambda = detail::field<double>(f, "lambda", cfg.fusion.lambda);
  }
  if (j.contains("evaluation")) {
    const json& e = j.at("evaluation");
    detail::check_keys(e, {"ks"}, "evaluation.");
    cfg.eval_ks = detail::field<std::vector<int>>(e, "ks", cfg.eval_ks);
  }
  if (j.contains("synth")) {
    const json& s = j.at("synth");
    detail::check_keys(s,
                       {"num_docs", "vocab_size", "doc_len_lo", "doc_len_hi",
                        "distractor_overlap", "private_tokens_per_doc", "query_tokens"},
                       "synth.");
    cfg.synth.num_docs = detail::field<std::size_t>(s, "num_docs", cfg.synth.num_docs);
    cfg.synth.vocab_size = detail::field<std::size_t>(s, "vocab_size", cfg.synth.vocab_size);
    cfg.synth.doc_len_lo = detail::field<std::size_t>(s, "doc_len_lo", cfg.synth.doc_len_lo);
    cfg.synth.doc_len_hi = detail::field<std::size_t>(s, "doc_len_hi", cfg.synth.doc_len_hi);
    cfg.synth.distractor_overlap =
        detail::field<double>(s, "distractor_overlap", cfg.synth.distractor_overlap);
    cfg.synth.private_tokens_per_doc =
        detail::field<std::size_t>(s, "private_tokens_per_doc", cfg.synth.private_tokens_per_doc);
    cfg.synth.query_tokens =
        detail::field<std::size_t>(s, "query_tokens", cfg.synth.query_tokens);
  }
  cfg.finalize();
  cfg.validate();
  return cfg;
}

inline json load_config_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return j;
}

// Dotted-path override, "train.mode=cocktail". The value is parsed as JSON
// when possible (numbers, booleans, arrays) and falls back to a raw string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override must look like path.to.key=value: '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }

  json* node = &cfg;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = path.find('.', pos);
    const std::string key = path.substr(pos, dot == std::string::npos ? path.size() - pos
                                                                      : dot - pos);
    if (key.empty()) throw ValidationError("override has an empty path segment: '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    if (!node->is_object()) {
      throw ValidationError("override path '" + path + "' descends into a non-object");
    }
    pos = dot + 1;
  }
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out << content;
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + " failed: " + ec.message());
}

// Runs a path-taking writer against a temp file, then renames into place.
template <typename WriteFn>
inline void write_atomic_via(const std::string& path, WriteFn&& writer) {
  const std::string tmp = path + ".tmp";
  writer(tmp);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename " + tmp + " -> " + path + " failed: " + ec.message());
}

namespace detail {

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace detail

// Fingerprint of everything that shapes the data protocol: the root seed,
// featurizer, generation, mining, split, training hyperparameters (mode
// excluded so different modes over the same data share a hash), fusion
// weight, evaluation cutoffs, and the raw bytes of the document and query
// files. Two reports with equal hashes are provably a same-data comparison.
inline std::string compute_config_hash(const PipelineConfig& cfg) {
  json protocol = cfg.to_json(false);
  protocol["train"].erase("mode");
  protocol.erase("threads");
  protocol.erase("synth");
  const std::string canon = protocol.dump();
  std::uint64_t h = hash_bytes(canon.data(), canon.size(), 0x524546494e45ULL);
  const std::string docs = read_file_bytes(cfg.paths.documents);
  h = hash_combine(h, hash_bytes(docs.data(), docs.size(), 1));
  const std::string queries = read_file_bytes(cfg.paths.queries);
  h = hash_combine(h, hash_bytes(queries.data(), queries.size(), 2));
  return detail::hex64(h);
}

namespace detail {

inline void require_output_dir(const PipelineConfig& cfg) {
  if (cfg.paths.output_dir.empty()) throw ValidationError("config: paths.output_dir is not set");
  std::error_code ec;
  std::filesystem::create_directories(cfg.paths.output_dir, ec);
  if (ec) {
    throw IoError("cannot create output dir " + cfg.paths.output_dir + ": " + ec.message());
  }
}

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace detail

// Embeds the corpus with the untrained featurizer and snapshots the store
// (binary plus a JSON debug dump).
inline void cmd_ingest(const PipelineConfig& cfg) {
  detail::require_output_dir(cfg);
  const auto docs = load_documents(cfg.paths.documents);
  const Encoder enc = Encoder::vanilla(cfg.featurizer);
  VectorStore store = ingest(docs, enc.embed_fn(), cfg.threads);
  write_atomic_via(detail::join_path(cfg.paths.output_dir, "store.bin"),
                   [&](const std::string& tmp) { store.save(tmp); });
  write_file_atomic(detail::join_path(cfg.paths.output_dir, "store_debug.json"),
                    store.debug_dump().dump(2) + "\n");
}

// Generates queries per document, mines hard negatives against the frozen
// embedding, and writes the triple files plus a mining report. Exits
// non-zero only when nothing at all could be mined.
inline MiningReport cmd_augment(const PipelineConfig& cfg) {
  detail::require_output_dir(cfg);
  const auto docs = load_documents(cfg.paths.documents);
  const Encoder enc = Encoder::vanilla(cfg.featurizer);
  DatasetBuild build = build_dataset(docs, cfg.generation, cfg.mining, enc.embed_fn(),
                                     cfg.threads);
  if (build.triples.empty()) {
    throw GenerationError("augment: no triples produced (" +
                          std::to_string(build.report.dropped_queries) + " queries dropped, " +
                          std::to_string(build.report.failed_docs.size()) + " documents failed)");
  }
  auto [train_triples, val_triples] = split_triples(build.triples, cfg.split);

  write_atomic_via(detail::join_path(cfg.paths.output_dir, "triples.jsonl"),
                   [&](const std::string& tmp) { write_triples(tmp, build.triples); });
  write_atomic_via(detail::join_path(cfg.paths.output_dir, "triples_train.jsonl"),
                   [&](const std::string& tmp) { write_triples(tmp, train_triples); });
  write_atomic_via(detail::join_path(cfg.paths.output_dir, "triples_val.jsonl"),
                   [&](const std::string& tmp) { write_triples(tmp, val_triples); });

  json report = build.report.to_json();
  report["train_triples"] = train_triples.size();
  report["val_triples"] = val_triples.size();
  report["config_hash"] = compute_config_hash(cfg);
  write_file_atomic(detail::join_path(cfg.paths.output_dir, "mining_report.json"),
                    report.dump(2) + "\n");
  return build.report;
}

namespace detail {

// Shared by cmd_train and the OOD harness so both write identical artifacts.
inline Checkpoint train_and_save(const PipelineConfig& cfg,
                                 const std::vector<TrainingTriple>& triples,
                                 const std::vector<Document>& docs, const std::string& out_dir) {
  TrainResult result = train(triples, docs, cfg.featurizer, cfg.train);
  Checkpoint ckpt;
  ckpt.encoder = Encoder{cfg.featurizer, result.head, result.lambda_inference};
  ckpt.mode = to_string(result.mode);
  ckpt.config_hash = compute_config_hash(cfg);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output dir " + out_dir + ": " + ec.message());
  write_atomic_via(join_path(out_dir, "checkpoint.json"),
                   [&](const std::string& tmp) { save_checkpoint(tmp, ckpt); });

  json history{{"history", history_to_json(result)},
               {"config", cfg.to_json(false)},
               {"config_hash", ckpt.config_hash}};
  write_file_atomic(join_path(out_dir, "training_history.json"), history.dump(2) + "\n");
  return ckpt;
}

}  // namespace detail

// Trains the configured mode on triples_train.jsonl and writes the
// checkpoint plus per-epoch history. Vanilla mode emits the identity
// checkpoint without touching the triple files.
inline Checkpoint cmd_train(const PipelineConfig& cfg) {
  detail::require_output_dir(cfg);
  std::vector<TrainingTriple> triples;
  std::vector<Document> docs;
  if (cfg.train.mode != TrainMode::vanilla) {
    triples = load_triples(detail::join_path(cfg.paths.output_dir, "triples_train.jsonl"));
    docs = load_documents(cfg.paths.documents);
    validate_triples(triples, docs);
  }
  return detail::train_and_save(cfg, triples, docs, cfg.paths.output_dir);
}

namespace detail {

inline MetricsReport eval_and_save(const PipelineConfig& cfg, const Checkpoint& ckpt,
                                   const std::string& out_dir) {
  const FrozenFeaturizer& cf = cfg.featurizer;
  const FrozenFeaturizer& kf = ckpt.encoder.featurizer;
  if (cf.dimension != kf.dimension || cf.hash_seed != kf.hash_seed ||
      cf.ngram_lo != kf.ngram_lo || cf.ngram_hi != kf.ngram_hi) {
    throw ValidationError(
        "eval: checkpoint was produced under a different featurizer than the config");
  }
  if (ckpt.mode == "refine" && ckpt.encoder.lambda != cfg.fusion.lambda) {
    throw ValidationError("eval: checkpoint fusion weight " +
                          std::to_string(ckpt.encoder.lambda) +
                          " does not match config fusion.lambda " +
                          std::to_string(cfg.fusion.lambda));
  }

  const auto docs = load_documents(cfg.paths.documents);
  const auto queries = load_queries(cfg.paths.queries);
  validate_queries(queries, docs);

  const EmbedFn embed = ckpt.encoder.embed_fn();
  VectorStore store = ingest(docs, embed, cfg.threads);
  MetricsReport report = evaluate(queries, store, embed, cfg.eval_ks, cfg.threads);
  report.mode = ckpt.mode;
  report.config_hash = compute_config_hash(cfg);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output dir " + out_dir + ": " + ec.message());
  write_file_atomic(join_path(out_dir, "metrics.json"), metrics_to_json(report).dump(2) + "\n");
  write_file_atomic(join_path(out_dir, "metrics.md"), metrics_markdown({report}));
  return report;
}

}  // namespace detail

// Scores a checkpoint against the labeled query file and writes
// metrics.json plus a one-row markdown table.
inline MetricsReport cmd_eval(const PipelineConfig& cfg, const std::string& checkpoint_path) {
  detail::require_output_dir(cfg);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  return detail::eval_and_save(cfg, ckpt, cfg.paths.output_dir);
}

// ingest, augment, train, eval, in that order, sharing one output dir.
inline MetricsReport cmd_run_all(const PipelineConfig& cfg) {
  cmd_ingest(cfg);
  cmd_augment(cfg);
  cmd_train(cfg);
  return cmd_eval(cfg, detail::join_path(cfg.paths.output_dir, "checkpoint.json"));
}

struct OodOutcome {
  std::vector<MetricsReport> reports;  // vanilla, finetune, cocktail, refine
  int flag_k = 0;
  double refine_recall = 0.0;
  double finetune_recall = 0.0;
  bool refine_below_finetune = false;
};

// Trains finetune, cocktail, and refine heads on the train-domain corpus
// (one shared augmentation pass), then scores those plus the untrained
// baseline on the out-of-domain corpus. The report flags, not fails, a
// refine row that loses to finetune.
inline OodOutcome cmd_run_ood(const PipelineConfig& base, const std::string& train_corpus_dir,
                              const std::string& ood_corpus_dir) {
  PipelineConfig cfg_train = base;
  cfg_train.paths.documents = detail::join_path(train_corpus_dir, "documents.jsonl");
  cfg_train.paths.queries = detail::join_path(train_corpus_dir, "queries.jsonl");
  cfg_train.paths.output_dir = detail::join_path(base.paths.output_dir, "train_domain");
  cfg_train.finalize();

  PipelineConfig cfg_ood = base;
  cfg_ood.paths.documents = detail::join_path(ood_corpus_dir, "documents.jsonl");
  cfg_ood.paths.queries = detail::join_path(ood_corpus_dir, "queries.jsonl");
  cfg_ood.finalize();

  detail::require_output_dir(base);
  cmd_augment(cfg_train);
  const auto triples =
      load_triples(detail::join_path(cfg_train.paths.output_dir, "triples_train.jsonl"));
  const auto docs = load_documents(cfg_train.paths.documents);

  OodOutcome outcome;
  const TrainMode modes[] = {TrainMode::vanilla, TrainMode::finetune, TrainMode::cocktail,
                             TrainMode::refine};
  for (TrainMode mode : modes) {
    PipelineConfig cfg_mode = cfg_train;
    cfg_mode.train.mode = mode;
    const std::string mode_dir = detail::join_path(base.paths.output_dir, to_string(mode));
    Checkpoint ckpt = detail::train_and_save(cfg_mode, triples, docs, mode_dir);
    outcome.reports.push_back(detail::eval_and_save(cfg_ood, ckpt, mode_dir));
  }

  // Compare refine vs finetune recall at cutoff 3 when it is configured,
  // else at the largest cutoff present.
  const bool has_three =
      std::find(base.eval_ks.begin(), base.eval_ks.end(), 3) != base.eval_ks.end();
  outcome.flag_k =
      has_three ? 3 : *std::max_element(base.eval_ks.begin(), base.eval_ks.end());
  outcome.finetune_recall = outcome.reports[1].per_k.at(outcome.flag_k).recall;
  outcome.refine_recall = outcome.reports[3].per_k.at(outcome.flag_k).recall;
  outcome.refine_below_finetune = outcome.refine_recall < outcome.finetune_recall;

  json grid = json::object();
  for (const auto& r : outcome.reports) grid[r.mode] = metrics_to_json(r);
  json report{{"modes", grid},
              {"flag_k", outcome.flag_k},
              {"refine_recall", outcome.refine_recall},
              {"finetune_recall", outcome.finetune_recall},
              {"refine_below_finetune", outcome.refine_below_finetune},
              {"train_corpus", train_corpus_dir},
              {"ood_corpus", ood_corpus_dir}};
  write_file_atomic(detail::join_path(base.paths.output_dir, "ood_report.json"),
                    report.dump(2) + "\n");

  std::string md = metrics_markdown(outcome.reports);
  if (outcome.refine_below_finetune) {
    md += "\nflag: refine Recall@" + std::to_string(outcome.flag_k) +
          " fell below finetune on the out-of-domain corpus\n";
  }
  write_file_atomic(detail::join_path(base.paths.output_dir, "ood_report.md"), md);
  return outcome;
}

// Joins several metrics.json files into one comparison table after checking
// they describe the same data protocol.
inline std::string cmd_compare(const std::vector<std::string>& metrics_paths) {
  if (metrics_paths.empty()) throw ValidationError("compare: no metrics files given");
  std::vector<MetricsReport> reports;
  for (const auto& path : metrics_paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
    reports.push_back(metrics_from_json(j));
  }
  for (const auto& r : reports) {
    if (r.config_hash != reports.front().config_hash) {
      throw ValidationError("compare: config hashes differ; reports are not a same-data "
                            "comparison (" +
                            reports.front().config_hash + " vs " + r.config_hash + ")");
    }
  }
  return metrics_markdown(reports);
}

// Writes a synthetic labeled corpus (documents.jsonl + queries.jsonl).
inline SynthCorpus cmd_synth(const PipelineConfig& cfg, const std::string& out_dir) {
  SynthCorpus corpus = generate_corpus(cfg.synth);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output dir " + out_dir + ": " + ec.message());
  write_atomic_via(detail::join_path(out_dir, "documents.jsonl"),
                   [&](const std::string& tmp) { write_documents(tmp, corpus.documents); });
  write_atomic_via(detail::join_path(out_dir, "queries.jsonl"),
                   [&](const std::string& tmp) { write_queries(tmp, corpus.queries); });
  return corpus;
}

}  // namespace refine
