#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "scnn/model.hpp"
#include "scnn/synthesizer.hpp"

SCNN_NAMESPACE_BEGIN

enum class Strategy { online, offline };

std::string to_string(Strategy strategy);
Strategy parse_strategy(const std::string& name);

struct CyclePlan {
  std::size_t cycles = 5;
  Strategy strategy = Strategy::offline;
  NetConfig net = NetConfig::full();
  std::size_t primary_epochs = 20;    // phase 1
  std::size_t synthetic_epochs = 10;  // phase 3
  /// Epochs of the final from-scratch run (offline) and of the baseline.
  std::size_t offline_epochs = 20;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{};
  /// Phase 3 trains on synthesized data only unless set.
  bool mix_primary = false;
  SynthesisConfig synthesis{};
  std::size_t variants_per_sample = 1;
  std::size_t workers = 1;
  /// Empty runs every cycle.
  std::optional<std::size_t> patience = 3;
  std::uint64_t seed = 0;
  /// Checkpoints, synthesized data and metrics go here; empty writes nothing.
  std::filesystem::path output_dir;

  void validate() const;
};

/// One row of the metrics CSV. Optional fields render as empty cells.
struct MetricsRow {
  int cycle = 0;
  std::string phase;  // "1", "2", "3", "offline" or "baseline"
  std::optional<std::size_t> epoch;
  std::optional<double> train_accuracy;
  std::optional<double> test_accuracy;
  std::optional<double> loss;
  std::optional<std::size_t> synth_count;
  std::optional<double> flip_rate;
  double wall_ms = 0;
};

struct CycleEntry {
  int cycle = 0;
  double phase1_train_accuracy = 0;
  double phase1_test_accuracy = 0;
  double train_accuracy = 0;  // after phase 3
  double test_accuracy = 0;   // after phase 3
  std::size_t synthesized = 0;
  std::size_t aborted = 0;
  double flip_rate = 0;
  double wall_ms = 0;
  std::uint64_t checksum_before_synthesis = 0;
  std::uint64_t checksum_after_synthesis = 0;

  bool weights_untouched() const { return checksum_before_synthesis == checksum_after_synthesis; }
};

struct RunReport {
  Strategy strategy = Strategy::online;
  std::vector<CycleEntry> cycles;
  std::vector<MetricsRow> metrics;
  std::size_t pool_size = 0;
  /// Test accuracy of the evolving net after its last cycle.
  double online_final_accuracy = 0;
  /// Offline: the from-scratch net; online: equals online_final_accuracy.
  double final_accuracy = 0;
  bool stopped_early = false;
  /// Set when a phase threw; `cycles` then holds the completed ones.
  std::optional<std::string> failure;

  bool frozen_contract_held() const;
};

enum class StopDecision { proceed, stop };

/// Stops when the last `patience` cycles did not beat the best earlier test
/// accuracy, or when the cycle budget is spent.
StopDecision stopping_check(const RunReport& report, std::optional<std::size_t> patience, std::size_t cycle_budget);

/// Seed for one phase of one cycle, derived from the plan seed.
std::uint64_t phase_seed(std::uint64_t seed, int cycle, int phase);

struct CycleOutcome {
  CycleEntry entry;
  BatchSynthesis synthesized;
  std::vector<MetricsRow> metrics;
};

/// Phase 1 train, freeze, phase 2 synthesize, unfreeze, phase 3 train on the
/// samples synthesized in this cycle.
CycleOutcome run_cycle(EmbeddedNet& net, const LabeledDataset& primary, const LabeledDataset& test, int cycle,
                       const CyclePlan& plan);

RunReport run_online(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& test);
RunReport run_offline(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& test);
/// Dispatches on plan.strategy.
RunReport run(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& test);

struct Retrained {
  EmbeddedNet net;
  double test_accuracy = 0;
};

/// Fresh net trained from scratch on primary plus the synthesized pool.
Retrained retrain_offline(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& pool,
                          const LabeledDataset& test, int cycle, std::vector<MetricsRow>& metrics);

/// Fresh net trained on primary alone with the offline retrain's seed and epochs.
Evaluation run_baseline(const CyclePlan& plan, const LabeledDataset& primary, const LabeledDataset& test,
                        std::vector<MetricsRow>* metrics = nullptr);

/// Seed used to initialise the embedded net of a run.
std::uint64_t net_seed(std::uint64_t seed);
/// Seed shared by the offline retrain and the baseline.
std::uint64_t retrain_seed(std::uint64_t seed);

SCNN_NAMESPACE_END
