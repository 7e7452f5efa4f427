// Command-line front end for the retrieval fine-tuning pipeline. One JSON
// config plus dotted-path overrides drives every subcommand; see README for
// the schema. Exit codes: 0 success, 1 usage or validation problem, 2
// runtime failure (transport, generation, numerics, divergence, io).

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "refine/pipeline.hpp"

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct GlobalArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  bool offline = false;
  unsigned threads = 0;  // 0 = leave whatever the config says
};

refine::PipelineConfig resolve_config(const GlobalArgs& args) {
  refine::json raw = refine::json::object();
  if (!args.config_path.empty()) raw = refine::load_config_json(args.config_path);
  for (const auto& assignment : args.overrides) refine::apply_override(raw, assignment);
  if (args.offline) raw["generation"]["endpoint"] = "";
  if (args.threads > 0) raw["threads"] = args.threads;
  return refine::parse_config(raw);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive retrieval fine-tuning pipeline"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalArgs args;
  app.add_option("--config", args.config_path, "JSON config file");
  app.add_option("--set", args.overrides,
                 "Config override as path.to.key=value (repeatable)");
  app.add_flag("--offline", args.offline,
               "Force offline query generation regardless of configured endpoint");
  app.add_option("--threads", args.threads, "Worker thread cap for parallel stages");

  auto* ingest = app.add_subcommand("ingest", "Embed the corpus and snapshot the vector store");
  auto* augment =
      app.add_subcommand("augment", "Generate queries, mine negatives, write triples");
  auto* train = app.add_subcommand("train", "Train the configured mode and write a checkpoint");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the labeled query file");
  std::string checkpoint_path;
  eval->add_option("--checkpoint", checkpoint_path,
                   "Checkpoint file (default: <output_dir>/checkpoint.json)");

  auto* run_all = app.add_subcommand("run-all", "ingest + augment + train + eval");

  auto* run_ood = app.add_subcommand(
      "run-ood", "Train on one corpus, evaluate all modes on another");
  std::string train_corpus_dir, ood_corpus_dir;
  run_ood->add_option("--train-corpus", train_corpus_dir,
                      "Directory with documents.jsonl + queries.jsonl to train on")
      ->required();
  run_ood->add_option("--ood-corpus", ood_corpus_dir,
                      "Directory with documents.jsonl + queries.jsonl to evaluate on")
      ->required();

  auto* compare =
      app.add_subcommand("compare", "Join metrics.json files into one comparison table");
  std::vector<std::string> metrics_paths;
  std::string compare_out;
  compare->add_option("files", metrics_paths, "metrics.json files")->required();
  compare->add_option("--out", compare_out, "Write the table here instead of stdout");

  auto* synth = app.add_subcommand("synth", "Write a synthetic labeled corpus");
  std::string synth_out;
  synth->add_option("--out", synth_out, "Directory for documents.jsonl + queries.jsonl")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (compare->parsed()) {
      const std::string table = refine::cmd_compare(metrics_paths);
      if (compare_out.empty()) {
        std::cout << table;
      } else {
        refine::write_file_atomic(compare_out, table);
        std::cout << "wrote " << compare_out << "\n";
      }
      return 0;
    }

    refine::PipelineConfig cfg = resolve_config(args);
    if (ingest->parsed()) {
      refine::cmd_ingest(cfg);
      std::cout << "wrote " << cfg.paths.output_dir << "/store.bin\n";
    } else if (augment->parsed()) {
      refine::MiningReport report = refine::cmd_augment(cfg);
      std::cout << "generated " << report.queries_generated << " queries, emitted "
                << report.triples_emitted << " triples (" << report.band_fallbacks
                << " via fallback, " << report.dropped_queries << " dropped)\n";
    } else if (train->parsed()) {
      refine::Checkpoint ckpt = refine::cmd_train(cfg);
      std::cout << "trained mode " << ckpt.mode << ", wrote " << cfg.paths.output_dir
                << "/checkpoint.json\n";
    } else if (eval->parsed()) {
      if (checkpoint_path.empty()) {
        checkpoint_path = cfg.paths.output_dir + "/checkpoint.json";
      }
      refine::MetricsReport report = refine::cmd_eval(cfg, checkpoint_path);
      std::cout << refine::metrics_markdown({report});
    } else if (run_all->parsed()) {
      refine::MetricsReport report = refine::cmd_run_all(cfg);
      std::cout << refine::metrics_markdown({report});
    } else if (run_ood->parsed()) {
      refine::OodOutcome outcome = refine::cmd_run_ood(cfg, train_corpus_dir, ood_corpus_dir);
      std::cout << refine::metrics_markdown(outcome.reports);
      if (outcome.refine_below_finetune) {
        std::cout << "flag: refine Recall@" << outcome.flag_k
                  << " fell below finetune on the out-of-domain corpus\n";
      }
    } else if (synth->parsed()) {
      refine::SynthCorpus corpus = refine::cmd_synth(cfg, synth_out);
      std::cout << "wrote " << corpus.documents.size() << " documents and "
                << corpus.queries.size() << " queries to " << synth_out << "\n";
    }
    return 0;
  } catch (const refine::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const refine::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const refine::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
