#include "scnn/lifecycle.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <stdexcept>

#include "scnn/checkpoint.hpp"
#include "scnn/idx.hpp"
#include "scnn/report_io.hpp"

SCNN_NAMESPACE_BEGIN

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

std::string cycle_stem(int cycle) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "cycle%03d", cycle);
  return buf;
}

// Unfreezes on scope exit so a failed synthesis leaves the net trainable.
class FreezeScope {
 public:
  explicit FreezeScope(EmbeddedNet& net) : net_(net) { net_.freeze(); }
  ~FreezeScope() { net_.unfreeze(); }
  FreezeScope(const FreezeScope&) = delete;
  FreezeScope& operator=(const FreezeScope&) = delete;

 private:
  EmbeddedNet& net_;
};

TrainOptions train_options(const CyclePlan& plan, std::size_t epochs, std::uint64_t seed) {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = plan.batch_size;
  o.optimizer = plan.optimizer;
  o.seed = seed;
  return o;
}

void append_training_rows(std::vector<MetricsRow>& rows, int cycle, const std::string& phase,
                          const TrainingHistory& history) {
  for (const auto& e : history.epochs) {
    MetricsRow r;
    r.cycle = cycle;
    r.phase = phase;
    r.epoch = e.epoch;
    r.train_accuracy = e.train_accuracy;
    r.loss = e.train_loss;
    r.wall_ms = e.wall_ms;
    rows.push_back(r);
  }
}

// Trains, then evaluates on the test split and attaches the result to the
// phase's last row (or a dedicated row when no epoch ran).
struct PhaseResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
};

PhaseResult train_phase(EmbeddedNet& net, const LabeledDataset& data, const LabeledDataset& test, int cycle,
                        const std::string& phase, const TrainOptions& options, std::vector<MetricsRow>& rows) {
  PhaseResult result;
  const auto start = Clock::now();
  TrainingHistory history;
  if (!data.empty()) history = train(net, data, options);
  append_training_rows(rows, cycle, phase, history);
  const Evaluation eval = evaluate(net, test);
  result.test_accuracy = eval.accuracy;
  if (history.epochs.empty()) {
    MetricsRow r;
    r.cycle = cycle;
    r.phase = phase;
    r.wall_ms = elapsed_ms(start);
    rows.push_back(r);
  } else {
    result.train_accuracy = history.epochs.back().train_accuracy;
    rows.back().train_accuracy = result.train_accuracy;
  }
  rows.back().test_accuracy = eval.accuracy;
  return result;
}

void write_cycle_artifacts(const CyclePlan& plan, const EmbeddedNet& net, const CycleOutcome& outcome) {
  const auto& dir = plan.output_dir;
  const std::string stem = cycle_stem(outcome.entry.cycle);
  save_checkpoint(dir / (stem + ".ckpt"), net, {outcome.entry.cycle, plan.seed, "cycle"});
  save_idx(outcome.synthesized.dataset, dir / (stem + "-synth-images.idx.gz"), dir / (stem + "-synth-labels.idx.gz"),
           IdxType::f32);
  write_provenance_jsonl(dir / (stem + "-synth-provenance.jsonl"), outcome.synthesized.records);
}

RunReport run_cycles(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& test,
                     LabeledDataset& pool, EmbeddedNet& net) {
  RunReport report;
  report.strategy = plan.strategy;
  if (!plan.output_dir.empty()) std::filesystem::create_directories(plan.output_dir);
  for (std::size_t c = 1; c <= plan.cycles; ++c) {
    const int cycle = static_cast<int>(c);
    CycleOutcome outcome;
    try {
      outcome = run_cycle(net, primary, test, cycle, plan);
    } catch (const std::exception& e) {
      report.failure = cycle_stem(cycle) + ": " + e.what();
      break;
    }
    report.metrics.insert(report.metrics.end(), outcome.metrics.begin(), outcome.metrics.end());
    report.cycles.push_back(outcome.entry);
    pool.append(outcome.synthesized.dataset);
    if (!plan.output_dir.empty()) {
      write_cycle_artifacts(plan, net, outcome);
      write_metrics_csv(plan.output_dir / "metrics.csv", report.metrics);
    }
    if (stopping_check(report, plan.patience, plan.cycles) == StopDecision::stop) {
      report.stopped_early = c < plan.cycles;
      break;
    }
  }
  report.pool_size = pool.size();
  if (!report.cycles.empty()) report.online_final_accuracy = report.cycles.back().test_accuracy;
  report.final_accuracy = report.online_final_accuracy;
  return report;
}

void finish(const CyclePlan& plan, const RunReport& report, const EmbeddedNet& final_net) {
  if (plan.output_dir.empty()) return;
  write_metrics_csv(plan.output_dir / "metrics.csv", report.metrics);
  write_report_json(plan.output_dir / "report.json", report);
  save_checkpoint(plan.output_dir / "final.ckpt", final_net,
                  {static_cast<int>(report.cycles.size()), plan.seed, to_string(plan.strategy)});
}

}  // namespace

std::string to_string(Strategy strategy) { return strategy == Strategy::online ? "online" : "offline"; }

Strategy parse_strategy(const std::string& name) {
  if (name == "online") return Strategy::online;
  if (name == "offline") return Strategy::offline;
  throw std::invalid_argument("unknown strategy '" + name + "'");
}

void CyclePlan::validate() const {
  if (cycles == 0) throw std::invalid_argument("plan: cycles must be at least 1");
  if (batch_size == 0) throw std::invalid_argument("plan: batch_size must be positive");
  if (!(optimizer.learning_rate > 0)) throw std::invalid_argument("plan: learning rate must be positive");
  if (patience && *patience == 0) throw std::invalid_argument("plan: patience must be at least 1");
  if (variants_per_sample == 0) throw std::invalid_argument("plan: variants_per_sample must be at least 1");
  if (workers == 0) throw std::invalid_argument("plan: workers must be at least 1");
  synthesis.validate();
}

bool RunReport::frozen_contract_held() const {
  return std::all_of(cycles.begin(), cycles.end(), [](const CycleEntry& e) { return e.weights_untouched(); });
}

StopDecision stopping_check(const RunReport& report, std::optional<std::size_t> patience, std::size_t cycle_budget) {
  const auto& cycles = report.cycles;
  if (cycles.size() >= cycle_budget) return StopDecision::stop;
  if (!patience || cycles.empty()) return StopDecision::proceed;
  std::size_t best = 0;
  for (std::size_t i = 1; i < cycles.size(); ++i)
    if (cycles[i].test_accuracy > cycles[best].test_accuracy) best = i;
  const std::size_t since_best = cycles.size() - 1 - best;
  return since_best >= *patience ? StopDecision::stop : StopDecision::proceed;
}

std::uint64_t phase_seed(std::uint64_t seed, int cycle, int phase) {
  return derive_seed(seed, static_cast<std::uint64_t>(cycle), static_cast<std::uint64_t>(phase));
}

std::uint64_t net_seed(std::uint64_t seed) { return derive_seed(seed, 0, 100); }
std::uint64_t retrain_seed(std::uint64_t seed) { return derive_seed(seed, 0, 200); }

CycleOutcome run_cycle(EmbeddedNet& net, const LabeledDataset& primary, const LabeledDataset& test, int cycle,
                       const CyclePlan& plan) {
  plan.validate();
  if (primary.empty()) throw std::invalid_argument("run_cycle: primary dataset is empty");
  const auto start = Clock::now();
  CycleOutcome out;
  CycleEntry& entry = out.entry;
  entry.cycle = cycle;

  const PhaseResult p1 = train_phase(net, primary, test, cycle, "1",
                                     train_options(plan, plan.primary_epochs, phase_seed(plan.seed, cycle, 1)),
                                     out.metrics);
  entry.phase1_train_accuracy = p1.train_accuracy;
  entry.phase1_test_accuracy = p1.test_accuracy;

  {
    const auto synth_start = Clock::now();
    FreezeScope frozen(net);
    entry.checksum_before_synthesis = net.checksum();
    BatchOptions options{cycle, phase_seed(plan.seed, cycle, 2), plan.workers, plan.variants_per_sample};
    out.synthesized = synthesize_batch(primary, net, plan.synthesis, options);
    entry.checksum_after_synthesis = net.checksum();
    if (!entry.weights_untouched()) throw std::logic_error("run_cycle: weights changed during synthesis");

    entry.synthesized = out.synthesized.dataset.size();
    entry.aborted = out.synthesized.aborted;
    entry.flip_rate = out.synthesized.flip_rate();
    MetricsRow row;
    row.cycle = cycle;
    row.phase = "2";
    double loss = 0;
    std::size_t counted = 0;
    for (const auto& r : out.synthesized.records) {
      if (r.aborted) continue;
      loss += r.final_loss;
      ++counted;
    }
    if (counted) row.loss = loss / static_cast<double>(counted);
    row.synth_count = entry.synthesized;
    row.flip_rate = entry.flip_rate;
    row.wall_ms = elapsed_ms(synth_start);
    out.metrics.push_back(row);
  }

  LabeledDataset phase3 = out.synthesized.dataset;
  if (plan.mix_primary) phase3.append(primary);
  const PhaseResult p3 = train_phase(net, phase3, test, cycle, "3",
                                     train_options(plan, plan.synthetic_epochs, phase_seed(plan.seed, cycle, 3)),
                                     out.metrics);
  entry.train_accuracy = phase3.empty() || plan.synthetic_epochs == 0 ? p1.train_accuracy : p3.train_accuracy;
  entry.test_accuracy = p3.test_accuracy;
  entry.wall_ms = elapsed_ms(start);
  return out;
}

RunReport run_online(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& test) {
  plan.validate();
  EmbeddedNet net(plan.net, net_seed(plan.seed));
  LabeledDataset pool;
  RunReport report = run_cycles(plan, primary, test, pool, net);
  report.strategy = Strategy::online;
  finish(plan, report, net);
  return report;
}

RunReport run_offline(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& test) {
  plan.validate();
  EmbeddedNet online(plan.net, net_seed(plan.seed));
  LabeledDataset pool;
  RunReport report = run_cycles(plan, primary, test, pool, online);
  report.strategy = Strategy::offline;
  if (report.failure) {
    finish(plan, report, online);
    return report;
  }

  Retrained retrained =
      retrain_offline(plan, primary, pool, test, static_cast<int>(report.cycles.size()), report.metrics);
  report.final_accuracy = retrained.test_accuracy;
  finish(plan, report, retrained.net);
  return report;
}

Retrained retrain_offline(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& pool,
                          const LabeledDataset& test, int cycle, std::vector<MetricsRow>& metrics) {
  plan.validate();
  LabeledDataset combined = primary;
  combined.append(pool);
  Retrained out{EmbeddedNet(plan.net, retrain_seed(plan.seed)), 0};
  out.test_accuracy = train_phase(out.net, combined, test, cycle, "offline",
                                  train_options(plan, plan.offline_epochs, phase_seed(plan.seed, 0, 4)), metrics)
                          .test_accuracy;
  return out;
}

RunReport run(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& test) {
  return plan.strategy == Strategy::online ? run_online(plan, primary, test) : run_offline(plan, primary, test);
}

Evaluation run_baseline(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& test,
                        std::vector<MetricsRow>* metrics) {
  plan.validate();
  EmbeddedNet net(plan.net, retrain_seed(plan.seed));
  std::vector<MetricsRow> rows;
  train_phase(net, primary, test, 0, "baseline", train_options(plan, plan.offline_epochs, phase_seed(plan.seed, 0, 4)),
              rows);
  if (metrics) metrics->insert(metrics->end(), rows.begin(), rows.end());
  return evaluate(net, test);
}

SCNN_NAMESPACE_END
