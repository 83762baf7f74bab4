#include <CLI11.hpp>

#include <cstdio>
#include <exception>

#include "commands.hpp"

namespace {

void add_run_options(CLI::App* cmd, RunOverrides& run) {
  cmd->add_option("-c,--config", run.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", run.output, "Output directory (overrides the config)");
  cmd->add_option("--workers", run.workers, "Synthesis worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", run.seed, "Run seed (overrides the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Train a classifier, synthesize hard samples against it, retrain"};
  app.require_subcommand(1);

  RunOverrides train_args;
  auto* train = app.add_subcommand("train", "Phase 1 only: train a fresh net on the primary data");
  add_run_options(train, train_args);

  SynthesizeArgs synth_args;
  auto* synth = app.add_subcommand("synthesize", "Phase 2 only: synthesize hard samples against a checkpoint");
  add_run_options(synth, synth_args.run);
  synth->add_option("--checkpoint", synth_args.checkpoint, "Checkpoint of the embedded net")
      ->required()
      ->check(CLI::ExistingFile);
  synth->add_option("--cycle", synth_args.cycle, "Cycle id recorded in the provenance");

  CycleArgs cycle_args;
  auto* cycle = app.add_subcommand("cycle", "Full run: repeated train/synthesize/train cycles");
  add_run_options(cycle, cycle_args.run);
  cycle->add_option("--strategy", cycle_args.strategy, "online or offline")
      ->check(CLI::IsMember({"online", "offline"}));
  cycle->add_option("--cycles", cycle_args.cycles, "Cycle budget")->check(CLI::PositiveNumber);
  cycle->add_flag("--baseline", cycle_args.baseline, "Also train the primary-only baseline");

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "Test accuracy of a checkpoint");
  evaluate->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  auto* eval_config = evaluate->add_option("-c,--config", eval_args.config, "Run configuration naming the test split")
                          ->check(CLI::ExistingFile);
  auto* eval_images = evaluate->add_option("--images", eval_args.images, "IDX image file")->check(CLI::ExistingFile);
  auto* eval_labels = evaluate->add_option("--labels", eval_args.labels, "IDX label file")->check(CLI::ExistingFile);
  eval_images->needs(eval_labels)->excludes(eval_config);
  eval_labels->needs(eval_images);

  ExportArgs export_args;
  auto* exporter = app.add_subcommand("export-images", "PNG pairs of source and synthesized images");
  exporter->add_option("--source-images", export_args.source_images)->required()->check(CLI::ExistingFile);
  exporter->add_option("--source-labels", export_args.source_labels)->required()->check(CLI::ExistingFile);
  exporter->add_option("--synth-images", export_args.synth_images)->required()->check(CLI::ExistingFile);
  exporter->add_option("--synth-labels", export_args.synth_labels)->required()->check(CLI::ExistingFile);
  exporter->add_option("--provenance", export_args.provenance, "JSONL sidecar of the synthesized set")
      ->required()
      ->check(CLI::ExistingFile);
  exporter->add_option("-o,--output", export_args.output, "Directory for the PNG files")->required();
  exporter->add_option("--limit", export_args.limit, "Maximum number of pairs");

  GradcheckArgs grad_args;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable kernel");
  gradcheck->add_option("--seeds", grad_args.seeds, "Random seeds per kernel")->check(CLI::PositiveNumber);
  gradcheck->add_option("--threshold", grad_args.threshold, "Maximum relative error")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", grad_args.seed, "Base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) return run_train(train_args);
    if (*synth) return run_synthesize(synth_args);
    if (*cycle) return run_cycle_command(cycle_args);
    if (*evaluate) {
      if (eval_args.config.empty() && eval_args.images.empty()) {
        std::fprintf(stderr, "evaluate: pass --config or --images/--labels\n");
        return kExitUsage;
      }
      return run_evaluate(eval_args);
    }
    if (*exporter) return run_export_images(export_args);
    if (*gradcheck) return run_gradcheck(grad_args);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
