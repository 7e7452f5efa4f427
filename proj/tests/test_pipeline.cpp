#include <catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "refine/pipeline.hpp"
#include "test_util.hpp"

using namespace refine;
using testutil::TempDir;
using testutil::read_text;
using testutil::write_text;

namespace {

// Small, fast synthetic protocol shared by the end-to-end tests.
PipelineConfig small_config(const std::string& corpus_dir, const std::string& out_dir) {
  PipelineConfig cfg;
  cfg.seed = 3;
  cfg.paths.documents = corpus_dir + "/documents.jsonl";
  cfg.paths.queries = corpus_dir + "/queries.jsonl";
  cfg.paths.output_dir = out_dir;
  cfg.featurizer.dimension = 64;
  cfg.generation.queries_per_doc = 3;
  cfg.train.epochs = 3;
  cfg.train.learning_rate = 0.01;
  cfg.train.temperature = 0.2;
  cfg.synth.num_docs = 16;
  cfg.synth.vocab_size = 400;
  cfg.synth.doc_len_lo = 40;
  cfg.synth.doc_len_hi = 60;
  cfg.synth.distractor_overlap = 0.5;
  cfg.finalize();
  return cfg;
}

PipelineConfig seeded_corpus(const TempDir& dir, const std::string& out_name = "out") {
  auto cfg = small_config(dir.file("corpus"), dir.file(out_name));
  cmd_synth(cfg, dir.file("corpus"));
  return cfg;
}

const std::vector<std::string> kRunAllArtifacts = {
    "store.bin",         "store_debug.json",  "triples.jsonl",
    "triples_train.jsonl", "triples_val.jsonl", "mining_report.json",
    "checkpoint.json",   "training_history.json", "metrics.json",
    "metrics.md"};

}  // namespace

TEST_CASE("an empty config parses to defaults with derived seeds") {
  const auto cfg = parse_config(json::object());
  CHECK(cfg.seed == 42);
  CHECK(cfg.threads == 1);
  CHECK(cfg.featurizer.hash_seed == 43);
  CHECK(cfg.generation.seed == 44);
  CHECK(cfg.split.seed == 45);
  CHECK(cfg.train.seed == 46);
  CHECK(cfg.synth.seed == 47);
  CHECK(cfg.train.lambda == cfg.fusion.lambda);
  CHECK(cfg.fusion.lambda == 0.35);
  CHECK(cfg.eval_ks == std::vector<int>{1, 2, 3, 4, 5});
  CHECK(cfg.train.mode == TrainMode::refine);
  CHECK(cfg.mining.band_low == 0.5);
  CHECK(cfg.mining.band_high == 0.7);
}

TEST_CASE("one root seed drives every module seed by fixed offsets") {
  const auto cfg = parse_config(json{{"seed", 100}});
  CHECK(cfg.featurizer.hash_seed == 101);
  CHECK(cfg.generation.seed == 102);
  CHECK(cfg.split.seed == 103);
  CHECK(cfg.train.seed == 104);
  CHECK(cfg.synth.seed == 105);
}

TEST_CASE("the fusion weight is one knob shared by training and inference") {
  const auto cfg = parse_config(json{{"fusion", {{"lambda", 0.5}}}});
  CHECK(cfg.fusion.lambda == 0.5);
  CHECK(cfg.train.lambda == 0.5);

  const auto threaded = parse_config(json{{"threads", 8}});
  CHECK(threaded.train.threads == 8);
}

TEST_CASE("config parsing round-trips through its own serialization") {
  json j{{"seed", 9},
         {"threads", 2},
         {"featurizer", {{"dimension", 32}}},
         {"generation", {{"queries_per_doc", 4}, {"model_name", "m"}}},
         {"mining", {{"band_low", 0.4}, {"band_high", 0.8}}},
         {"split", {{"validation_fraction", 0.2}}},
         {"train", {{"mode", "cocktail"}, {"epochs", 7}}},
         {"fusion", {{"lambda", 0.25}}},
         {"evaluation", {{"ks", std::vector<int>{1, 3}}}},
         {"synth", {{"num_docs", 10}, {"vocab_size", 200}}},
         {"paths", {{"documents", "d.jsonl"}, {"queries", "q.jsonl"}, {"output_dir", "o"}}}};
  const auto cfg = parse_config(j);
  CHECK(cfg.featurizer.dimension == 32);
  CHECK(cfg.generation.queries_per_doc == 4);
  CHECK(cfg.mining.band_low == 0.4);
  CHECK(cfg.split.validation_fraction == 0.2);
  CHECK(cfg.train.mode == TrainMode::cocktail);
  CHECK(cfg.train.epochs == 7);
  CHECK(cfg.eval_ks == std::vector<int>{1, 3});
  CHECK(cfg.paths.documents == "d.jsonl");

  const auto again = parse_config(cfg.to_json());
  CHECK(again.to_json() == cfg.to_json());
}

TEST_CASE("unknown config keys are rejected by name") {
  CHECK_THROWS_MATCHES(parse_config(json{{"sead", 1}}), ValidationError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("sead")));
  CHECK_THROWS_MATCHES(
      parse_config(json{{"train", {{"learning_rte", 0.1}}}}), ValidationError,
      Catch::Matchers::MessageMatches(
          Catch::Matchers::ContainsSubstring("train.learning_rte")));
  CHECK_THROWS_AS(parse_config(json::array()), ValidationError);
}

TEST_CASE("bad config values are rejected") {
  CHECK_THROWS_AS(parse_config(json{{"seed", "abc"}}), ValidationError);
  CHECK_THROWS_AS(parse_config(json{{"threads", 0}}), ValidationError);
  CHECK_THROWS_AS(parse_config(json{{"train", {{"mode", "adam"}}}}), ValidationError);
  CHECK_THROWS_AS(parse_config(json{{"evaluation", {{"ks", json::array()}}}}),
                  ValidationError);
  CHECK_THROWS_AS(parse_config(json{{"evaluation", {{"ks", std::vector<int>{0}}}}}),
                  ValidationError);
  CHECK_THROWS_AS(parse_config(json{{"fusion", {{"lambda", 2.0}}}}), ValidationError);
  CHECK_THROWS_AS(parse_config(json{{"split", {{"validation_fraction", 1.0}}}}),
                  ValidationError);
  CHECK_THROWS_AS(
      parse_config(json{{"generation", {{"prompt_template", "no placeholder"}}}}),
      ValidationError);
}

TEST_CASE("dotted-path overrides edit the raw config") {
  json raw = json::object();
  apply_override(raw, "seed=7");
  apply_override(raw, "train.mode=cocktail");
  apply_override(raw, "train.epochs=12");
  apply_override(raw, "evaluation.ks=[1,3]");
  apply_override(raw, "fusion.lambda=0.5");
  CHECK(raw["seed"] == 7);
  CHECK(raw["train"]["mode"] == "cocktail");  // non-JSON value falls back to string
  CHECK(raw["train"]["epochs"] == 12);
  CHECK(raw["evaluation"]["ks"] == json::array({1, 3}));
  CHECK(raw["fusion"]["lambda"] == 0.5);

  const auto cfg = parse_config(raw);
  CHECK(cfg.seed == 7);
  CHECK(cfg.train.mode == TrainMode::cocktail);
  CHECK(cfg.eval_ks == std::vector<int>{1, 3});

  CHECK_THROWS_AS(apply_override(raw, "no-equals-sign"), ValidationError);
  CHECK_THROWS_AS(apply_override(raw, "=5"), ValidationError);
  CHECK_THROWS_AS(apply_override(raw, "train..epochs=5"), ValidationError);
  CHECK_THROWS_AS(apply_override(raw, "seed.nested=1"), ValidationError);
}

TEST_CASE("the config hash fingerprints the protocol and the data bytes") {
  TempDir dir;
  auto cfg = seeded_corpus(dir);

  const std::string h = compute_config_hash(cfg);
  CHECK(h.size() == 16);
  for (char c : h) CHECK(((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')));
  CHECK(compute_config_hash(cfg) == h);

  // Mode, threads, and synthesis settings do not change the protocol.
  auto variant = cfg;
  variant.train.mode = TrainMode::cocktail;
  CHECK(compute_config_hash(variant) == h);
  variant = cfg;
  variant.threads = 8;
  variant.finalize();
  CHECK(compute_config_hash(variant) == h);
  variant = cfg;
  variant.synth.num_docs = 99;
  CHECK(compute_config_hash(variant) == h);

  // Protocol fields do.
  variant = cfg;
  variant.seed = 4;
  variant.finalize();
  CHECK(compute_config_hash(variant) != h);
  variant = cfg;
  variant.fusion.lambda = 0.5;
  variant.finalize();
  CHECK(compute_config_hash(variant) != h);
  variant = cfg;
  variant.mining.exclude_top = 4;
  CHECK(compute_config_hash(variant) != h);

  // Same bytes under a different path hash identically.
  std::filesystem::create_directories(dir.file("copy"));
  std::filesystem::copy_file(cfg.paths.documents, dir.file("copy/documents.jsonl"));
  std::filesystem::copy_file(cfg.paths.queries, dir.file("copy/queries.jsonl"));
  variant = cfg;
  variant.paths.documents = dir.file("copy/documents.jsonl");
  variant.paths.queries = dir.file("copy/queries.jsonl");
  CHECK(compute_config_hash(variant) == h);

  // Changing the data changes the hash.
  write_text(dir.file("copy/documents.jsonl"),
             read_text(cfg.paths.documents) + R"({"id":"extra","text":"tail doc"})" "\n");
  CHECK(compute_config_hash(variant) != h);
}

TEST_CASE("synthesis writes a loadable labeled corpus, byte-stable across runs") {
  TempDir dir;
  auto cfg = small_config(dir.file("corpus"), dir.file("out"));
  const auto corpus = cmd_synth(cfg, dir.file("corpus"));
  CHECK(corpus.documents.size() == 16);

  const auto docs = load_documents(dir.file("corpus/documents.jsonl"));
  const auto queries = load_queries(dir.file("corpus/queries.jsonl"));
  CHECK(docs == corpus.documents);
  CHECK(queries == corpus.queries);
  CHECK_NOTHROW(validate_queries(queries, docs));

  const std::string doc_bytes = read_text(dir.file("corpus/documents.jsonl"));
  cmd_synth(cfg, dir.file("corpus2"));
  CHECK(read_text(dir.file("corpus2/documents.jsonl")) == doc_bytes);
}

TEST_CASE("ingest snapshots the frozen embedding of every document") {
  TempDir dir;
  auto cfg = seeded_corpus(dir);
  cmd_ingest(cfg);

  const auto store = VectorStore::load(dir.file("out/store.bin"));
  CHECK(store.dimension() == 64);
  CHECK(store.size() == 16);
  const auto docs = load_documents(cfg.paths.documents);
  const Encoder enc = Encoder::vanilla(cfg.featurizer);
  CHECK(store.vector_of(docs[0].id) == enc.embed(docs[0].text));

  const json dump = json::parse(read_text(dir.file("out/store_debug.json")));
  CHECK(dump["count"] == 16);
}

TEST_CASE("augment writes consistent triple files and a mining report") {
  TempDir dir;
  auto cfg = seeded_corpus(dir);
  const auto report = cmd_augment(cfg);
  CHECK(report.documents == 16);
  CHECK(report.queries_generated > 0);

  const auto all = load_triples(dir.file("out/triples.jsonl"));
  const auto train_part = load_triples(dir.file("out/triples_train.jsonl"));
  const auto val_part = load_triples(dir.file("out/triples_val.jsonl"));
  CHECK(all.size() == report.triples_emitted);
  CHECK(train_part.size() + val_part.size() == all.size());
  CHECK(val_part.size() <= all.size() * 0.15);

  const json mining = json::parse(read_text(dir.file("out/mining_report.json")));
  CHECK(mining["triples_emitted"] == all.size());
  CHECK(mining["train_triples"] == train_part.size());
  CHECK(mining["val_triples"] == val_part.size());
  CHECK(mining["config_hash"] == compute_config_hash(cfg));

  const auto docs = load_documents(cfg.paths.documents);
  CHECK_NOTHROW(validate_triples(all, docs));
}

TEST_CASE("augment fails loudly when nothing can be mined") {
  TempDir dir;
  write_text(dir.file("documents.jsonl"), R"({"id":"only","text":"a single document"})" "\n");
  write_text(dir.file("queries.jsonl"), R"({"id":"q","text":"query","gold_doc_ids":["only"]})" "\n");
  auto cfg = small_config(dir.path.string(), dir.file("out"));
  CHECK_THROWS_AS(cmd_augment(cfg), GenerationError);
}

TEST_CASE("the composed pipeline equals its separate stages, byte for byte") {
  TempDir dir;
  auto cfg = seeded_corpus(dir, "all_at_once");
  const auto report = cmd_run_all(cfg);
  CHECK(report.num_queries == 16);
  CHECK(report.per_k.size() == 5);
  CHECK(report.mode == "refine");

  auto staged = cfg;
  staged.paths.output_dir = dir.file("staged");
  cmd_ingest(staged);
  cmd_augment(staged);
  cmd_train(staged);
  cmd_eval(staged, dir.file("staged/checkpoint.json"));

  for (const auto& name : kRunAllArtifacts) {
    INFO(name);
    CHECK(read_text(dir.file("all_at_once/" + name)) == read_text(dir.file("staged/" + name)));
  }
}

TEST_CASE("the pipeline is deterministic end to end") {
  TempDir dir;
  auto cfg = seeded_corpus(dir, "run1");
  cmd_run_all(cfg);
  auto again = cfg;
  again.paths.output_dir = dir.file("run2");
  cmd_run_all(again);

  for (const auto& name : kRunAllArtifacts) {
    INFO(name);
    CHECK(read_text(dir.file("run1/" + name)) == read_text(dir.file("run2/" + name)));
  }
}

TEST_CASE("the checkpoint records the mode and fusion weight used") {
  TempDir dir;
  auto cfg = seeded_corpus(dir);
  cmd_run_all(cfg);
  const auto ckpt = load_checkpoint(dir.file("out/checkpoint.json"));
  CHECK(ckpt.mode == "refine");
  CHECK(ckpt.encoder.lambda == 0.35);
  CHECK(ckpt.config_hash == compute_config_hash(cfg));
  CHECK_FALSE(ckpt.encoder.head.is_identity());
}

TEST_CASE("evaluating under a different fusion weight is a hard error") {
  TempDir dir;
  auto cfg = seeded_corpus(dir);
  cmd_run_all(cfg);

  auto drifted = cfg;
  drifted.fusion.lambda = 0.5;
  drifted.finalize();
  CHECK_THROWS_MATCHES(cmd_eval(drifted, dir.file("out/checkpoint.json")), ValidationError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("fusion")));
}

TEST_CASE("evaluating under a different featurizer is a hard error") {
  TempDir dir;
  auto cfg = seeded_corpus(dir);
  cmd_run_all(cfg);

  auto drifted = cfg;
  drifted.featurizer.dimension = 32;
  CHECK_THROWS_MATCHES(cmd_eval(drifted, dir.file("out/checkpoint.json")), ValidationError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("featurizer")));
}

TEST_CASE("compare joins same-protocol reports and rejects mismatches") {
  TempDir dir;
  auto vanilla_cfg = seeded_corpus(dir, "vanilla_out");
  vanilla_cfg.train.mode = TrainMode::vanilla;
  cmd_run_all(vanilla_cfg);

  auto refine_cfg = vanilla_cfg;
  refine_cfg.train.mode = TrainMode::refine;
  refine_cfg.paths.output_dir = dir.file("refine_out");
  cmd_run_all(refine_cfg);

  const std::string table = cmd_compare(
      {dir.file("vanilla_out/metrics.json"), dir.file("refine_out/metrics.json")});
  CHECK(table.find("| vanilla |") != std::string::npos);
  CHECK(table.find("| refine |") != std::string::npos);

  json tampered = json::parse(read_text(dir.file("refine_out/metrics.json")));
  tampered["config_hash"] = "0000000000000000";
  write_text(dir.file("refine_out/metrics.json"), tampered.dump());
  CHECK_THROWS_MATCHES(
      cmd_compare({dir.file("vanilla_out/metrics.json"), dir.file("refine_out/metrics.json")}),
      ValidationError,
      Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("hash")));

  CHECK_THROWS_AS(cmd_compare({}), ValidationError);
  CHECK_THROWS_AS(cmd_compare({dir.file("absent.json")}), IoError);
}

TEST_CASE("the ood harness trains every mode once and scores them off-domain") {
  TempDir dir;
  auto cfg = small_config(dir.file("unused"), dir.file("ood_out"));
  cfg.synth.num_docs = 12;
  cmd_synth(cfg, dir.file("domain_a"));
  auto shifted = cfg;
  shifted.synth.seed = cfg.synth.seed + 100;
  cmd_synth(shifted, dir.file("domain_b"));

  const auto outcome = cmd_run_ood(cfg, dir.file("domain_a"), dir.file("domain_b"));
  REQUIRE(outcome.reports.size() == 4);
  CHECK(outcome.reports[0].mode == "vanilla");
  CHECK(outcome.reports[1].mode == "finetune");
  CHECK(outcome.reports[2].mode == "cocktail");
  CHECK(outcome.reports[3].mode == "refine");
  CHECK(outcome.flag_k == 3);
  CHECK(outcome.refine_below_finetune ==
        (outcome.refine_recall < outcome.finetune_recall));

  for (const char* mode : {"vanilla", "finetune", "cocktail", "refine"}) {
    CHECK(std::filesystem::exists(dir.file("ood_out/" + std::string(mode) + "/checkpoint.json")));
    CHECK(std::filesystem::exists(dir.file("ood_out/" + std::string(mode) + "/metrics.json")));
  }
  const json report = json::parse(read_text(dir.file("ood_out/ood_report.json")));
  CHECK(report["modes"].size() == 4);
  CHECK(report["flag_k"] == 3);
  CHECK(report["refine_below_finetune"] == outcome.refine_below_finetune);
  const std::string md = read_text(dir.file("ood_out/ood_report.md"));
  CHECK(md.find("| vanilla |") != std::string::npos);
  CHECK((md.find("flag:") != std::string::npos) == outcome.refine_below_finetune);
}

namespace {

int run_cli(const std::string& args, const std::string& log_path) {
  const std::string cmd =
      std::string(REFINE_CLI_PATH) + " " + args + " > " + log_path + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (rc == -1) return -1;
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -2;
}

}  // namespace

TEST_CASE("command line smoke test") {
  TempDir dir;
  auto cfg = small_config(dir.file("corpus"), dir.file("out"));
  write_text(dir.file("config.json"), cfg.to_json().dump(2));
  const std::string with_config = "--config " + dir.file("config.json") + " ";

  CHECK(run_cli(with_config + "synth --out " + dir.file("corpus"), dir.file("synth.log")) == 0);
  CHECK(std::filesystem::exists(dir.file("corpus/documents.jsonl")));

  CHECK(run_cli(with_config + "run-all", dir.file("runall.log")) == 0);
  CHECK(std::filesystem::exists(dir.file("out/metrics.json")));
  const std::string log = read_text(dir.file("runall.log"));
  CHECK(log.find("| refine |") != std::string::npos);

  // Overrides reach the pipeline: cocktail mode lands in the checkpoint.
  CHECK(run_cli(with_config + "--set train.mode=cocktail train", dir.file("train.log")) == 0);
  CHECK(load_checkpoint(dir.file("out/checkpoint.json")).mode == "cocktail");

  CHECK(run_cli(with_config + "eval", dir.file("eval.log")) == 0);
  CHECK(run_cli("compare " + dir.file("out/metrics.json") + " --out " + dir.file("table.md"),
                dir.file("compare.log")) == 0);
  CHECK(read_text(dir.file("table.md")).find("| cocktail |") != std::string::npos);
}

TEST_CASE("command line exit codes distinguish usage from runtime failures") {
  TempDir dir;
  auto cfg = small_config(dir.file("corpus"), dir.file("out"));
  write_text(dir.file("config.json"), cfg.to_json().dump(2));
  const std::string with_config = "--config " + dir.file("config.json") + " ";

  // No subcommand, unknown flags, unknown config keys: usage errors.
  CHECK(run_cli("", dir.file("a.log")) == 1);
  CHECK(run_cli("--bogus-flag synth --out " + dir.file("x"), dir.file("b.log")) == 1);
  CHECK(run_cli(with_config + "--set typo.key=1 synth --out " + dir.file("x"),
                dir.file("c.log")) == 1);
  CHECK(run_cli("--config " + dir.file("absent.json") + " ingest", dir.file("d.log")) == 2);

  // Missing input files at runtime.
  CHECK(run_cli(with_config + "eval --checkpoint " + dir.file("nope.json"),
                dir.file("e.log")) == 2);
  CHECK(run_cli(with_config + "ingest", dir.file("f.log")) == 2);

  CHECK(run_cli("--help", dir.file("g.log")) == 0);
  CHECK(read_text(dir.file("g.log")).find("run-ood") != std::string::npos);
}

TEST_CASE("the offline flag severs any configured endpoint") {
  TempDir dir;
  auto cfg = small_config(dir.file("corpus"), dir.file("out"));
  cfg.generation.endpoint = "http://127.0.0.1:1/v1/chat/completions";
  cfg.generation.max_retries = 0;
  cfg.generation.timeout_ms = 200;
  write_text(dir.file("config.json"), cfg.to_json().dump(2));
  const std::string with_config = "--config " + dir.file("config.json") + " ";

  CHECK(run_cli(with_config + "synth --out " + dir.file("corpus"), dir.file("s.log")) == 0);
  CHECK(run_cli(with_config + "ingest", dir.file("i.log")) == 0);
  // With the dead endpoint every document fails and augment exits non-zero;
  // --offline switches to the deterministic local generator.
  CHECK(run_cli(with_config + "augment", dir.file("on.log")) == 2);
  CHECK(run_cli(with_config + "--offline augment", dir.file("off.log")) == 0);
  CHECK(std::filesystem::exists(dir.file("out/triples_train.jsonl")));
}
