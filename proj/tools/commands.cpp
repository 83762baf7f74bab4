#include "commands.hpp"

#include <cstdio>
#include <filesystem>

#include "scnn/checkpoint.hpp"
#include "scnn/config.hpp"
#include "scnn/idx.hpp"
#include "scnn/lifecycle.hpp"
#include "scnn/png_export.hpp"
#include "scnn/report_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Datasets {
  scnn::LabeledDataset primary;
  scnn::LabeledDataset test;
};

scnn::RunConfig load_config(const RunOverrides& args) {
  try {
    scnn::RunConfig config = scnn::load_run_config(args.config);
    if (!args.output.empty()) config.output_dir = fs::absolute(args.output).lexically_normal();
    if (args.workers) config.plan.workers = *args.workers;
    if (args.seed) config.seed = *args.seed;
    config.validate(true);
    return config;
  } catch (const scnn::ConfigError& e) {
    throw UsageError(e.what());
  }
}

Datasets load_datasets(const scnn::RunConfig& config) {
  const auto& d = config.dataset;
  scnn::LabeledDataset train = scnn::load_idx(d.path(d.train_images), d.path(d.train_labels));
  Datasets out;
  if (d.subset_size) {
    if (*d.subset_size > train.size()) {
      throw UsageError("dataset.subset_size " + std::to_string(*d.subset_size) + " exceeds the " +
                       std::to_string(train.size()) + " training samples");
    }
    out.primary = scnn::subset(train, *d.subset_size, d.subset_seed, d.stratified);
  } else {
    out.primary = std::move(train);
  }
  out.test = scnn::load_idx(d.path(d.test_images), d.path(d.test_labels));
  const auto classes = scnn::NetConfig::for_scale(config.net_scale).classes;
  out.primary.validate(classes);
  out.test.validate(classes);
  return out;
}

void save_primary(const fs::path& dir, const scnn::LabeledDataset& primary) {
  scnn::save_idx(primary, dir / "primary-images.idx.gz", dir / "primary-labels.idx.gz");
}

}  // namespace

int run_train(const RunOverrides& args) {
  const scnn::RunConfig config = load_config(args);
  const Datasets data = load_datasets(config);
  const scnn::CyclePlan plan = config.resolved_plan();
  fs::create_directories(config.output_dir);
  scnn::save_run_config(config.output_dir / "config.json", config);

  scnn::EmbeddedNet net(plan.net, scnn::net_seed(plan.seed));
  scnn::TrainOptions options;
  options.epochs = plan.primary_epochs;
  options.batch_size = plan.batch_size;
  options.optimizer = plan.optimizer;
  options.seed = scnn::phase_seed(plan.seed, 1, 1);
  const scnn::TrainingHistory history = scnn::train(net, data.primary, options);
  const scnn::Evaluation eval = scnn::evaluate(net, data.test);

  std::vector<scnn::MetricsRow> rows;
  for (const auto& e : history.epochs) {
    rows.push_back({0, "1", e.epoch, e.train_accuracy, std::nullopt, e.train_loss, std::nullopt, std::nullopt, e.wall_ms});
  }
  if (!rows.empty()) rows.back().test_accuracy = eval.accuracy;
  scnn::write_metrics_csv(config.output_dir / "metrics.csv", rows);
  scnn::save_checkpoint(config.output_dir / "train.ckpt", net, {0, plan.seed, "1"});
  save_primary(config.output_dir, data.primary);
  std::printf("trained %zu epochs on %zu samples: test accuracy %.4f\n", history.epochs.size(), data.primary.size(),
              eval.accuracy);
  return kExitOk;
}

int run_synthesize(const SynthesizeArgs& args) {
  const scnn::RunConfig config = load_config(args.run);
  const scnn::CyclePlan plan = config.resolved_plan();
  scnn::LoadedCheckpoint loaded = scnn::load_checkpoint(args.checkpoint);
  if (!(loaded.net.config() == plan.net)) throw UsageError("checkpoint net layout differs from the configured scale");
  const Datasets data = load_datasets(config);
  fs::create_directories(config.output_dir);
  scnn::save_run_config(config.output_dir / "config.json", config);

  loaded.net.freeze();
  const auto before = loaded.net.checksum();
  const scnn::BatchOptions options{args.cycle, scnn::phase_seed(plan.seed, args.cycle, 2), plan.workers,
                                   plan.variants_per_sample};
  const scnn::BatchSynthesis result = scnn::synthesize_batch(data.primary, loaded.net, plan.synthesis, options);
  if (loaded.net.checksum() != before) throw std::logic_error("weights changed during synthesis");

  const fs::path& dir = config.output_dir;
  save_primary(dir, data.primary);
  scnn::save_idx(result.dataset, dir / "synth-images.idx.gz", dir / "synth-labels.idx.gz", scnn::IdxType::f32);
  scnn::write_provenance_jsonl(dir / "synth-provenance.jsonl", result.records);
  std::printf("synthesized %zu samples (%zu aborted), flip rate %.4f\n", result.dataset.size(), result.aborted,
              result.flip_rate());
  return kExitOk;
}

int run_cycle_command(const CycleArgs& args) {
  scnn::RunConfig config = load_config(args.run);
  try {
    if (!args.strategy.empty()) config.plan.strategy = scnn::parse_strategy(args.strategy);
    if (args.cycles) config.plan.cycles = *args.cycles;
    config.validate(true);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Datasets data = load_datasets(config);
  const scnn::CyclePlan plan = config.resolved_plan();
  fs::create_directories(config.output_dir);
  scnn::save_run_config(config.output_dir / "config.json", config);
  save_primary(config.output_dir, data.primary);

  const scnn::RunReport report = scnn::run(plan, data.primary, data.test);
  for (const auto& c : report.cycles) {
    std::printf("cycle %d: phase1 test %.4f, synthesized %zu (flip rate %.3f), test %.4f\n", c.cycle,
                c.phase1_test_accuracy, c.synthesized, c.flip_rate, c.test_accuracy);
  }
  std::printf("%s final test accuracy %.4f (online %.4f), pool %zu\n", scnn::to_string(report.strategy).c_str(),
              report.final_accuracy, report.online_final_accuracy, report.pool_size);
  if (args.baseline) {
    std::vector<scnn::MetricsRow> rows;
    const scnn::Evaluation base = scnn::run_baseline(plan, data.primary, data.test, &rows);
    scnn::write_metrics_csv(config.output_dir / "baseline-metrics.csv", rows);
    std::printf("baseline test accuracy %.4f\n", base.accuracy);
  }
  if (report.failure) {
    std::fprintf(stderr, "run stopped: %s\n", report.failure->c_str());
    return kExitFailure;
  }
  return report.frozen_contract_held() ? kExitOk : kExitFailure;
}

int run_evaluate(const EvaluateArgs& args) {
  const scnn::LoadedCheckpoint loaded = scnn::load_checkpoint(args.checkpoint);
  scnn::LabeledDataset test;
  if (!args.images.empty()) {
    test = scnn::load_idx(args.images, args.labels);
  } else {
    RunOverrides run;
    run.config = args.config;
    const scnn::RunConfig config = load_config(run);
    const auto& d = config.dataset;
    test = scnn::load_idx(d.path(d.test_images), d.path(d.test_labels));
  }
  test.validate(loaded.net.config().classes);
  const scnn::Evaluation eval = scnn::evaluate(loaded.net, test);
  std::printf("accuracy %.4f mean_loss %.4f samples %zu\n", eval.accuracy, eval.mean_loss, test.size());
  return kExitOk;
}

int run_export_images(const ExportArgs& args) {
  const scnn::LabeledDataset sources = scnn::load_idx(args.source_images, args.source_labels);
  const scnn::LabeledDataset synthesized = scnn::load_idx(args.synth_images, args.synth_labels);
  const auto records = scnn::read_provenance_jsonl(args.provenance);
  const std::size_t written = scnn::export_pairs(args.output, sources, synthesized, records, args.limit);
  std::printf("wrote %zu PNG pairs to %s\n", written, args.output.c_str());
  return kExitOk;
}
