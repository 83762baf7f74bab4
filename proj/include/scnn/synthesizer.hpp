#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scnn/manipulators.hpp"
#include "scnn/model.hpp"

SCNN_NAMESPACE_BEGIN

/// Loss target for one sample: the true class mixed with the nearest wrong class.
struct TargetSpec {
  int label = 0;
  int predicted = 0;  // argmax
  int runner_up = 0;  // argmax excluding `predicted`
  Real alpha = 0;
  Tensor target;  // [K]

  /// runner_up while the prediction is still correct, predicted otherwise.
  int nearest_wrong() const { return predicted == label ? runner_up : predicted; }
};

/// ties resolve to the lowest class id. Without normalize the target sums to 1 + alpha.
TargetSpec compute_targets(std::span<const Real> probs, int label, Real alpha, bool normalize = false);

/// -sum_k target_k * log(max(p_k, 1e-12)) on a [1,K] probability node.
Var ads_loss(Graph& g, Var probs, const TargetSpec& target);
Real ads_loss(std::span<const Real> probs, const TargetSpec& target);

enum class StopRule { fixed_steps, stop_on_flip, stop_on_margin };

std::string to_string(StopRule rule);
StopRule parse_stop_rule(const std::string& name);

struct SynthesisConfig {
  /// Empty means round-robin over affine, grid, erase by sample position.
  std::optional<ManipulatorKind> manipulator;
  /// The loss is stationary at p(label) = 1/(1+alpha), so 1 targets the
  /// decision boundary itself.
  Real alpha = Real(1);
  std::size_t max_steps = 40;
  Real affine_learning_rate = Real(0.05);
  Real grid_learning_rate = Real(0.1);
  Real erase_learning_rate = Real(0.1);
  /// stop_on_flip also stops once the top-2 margin falls to `margin`.
  StopRule stop_rule = StopRule::stop_on_flip;
  Real margin = Real(0.1);
  bool normalize_targets = false;
  GridKernelConfig grid{};
  std::size_t erase_cells = 4;
  std::size_t erase_count = 2;
  EraseMode erase_mode = EraseMode::zero;

  void validate() const;
  ManipulatorKind kind_for(std::size_t position) const;
};

struct SynthesisResult {
  Tensor adversarial;  // [C,H,W], clamped to [0,1]
  int label = 0;
  int prediction = 0;
  std::vector<Real> loss_trajectory;
  bool flipped = false;
  ManipulatorKind kind = ManipulatorKind::affine;
  ManipulatorParams params;
  std::size_t steps = 0;
  std::array<int, 2> top2{0, 0};
  /// |p(label) - p(best wrong class)| on the exported image.
  Real margin = 0;
  bool aborted = false;
  std::string error;

  bool loss_reduced() const {
    return !loss_trajectory.empty() && loss_trajectory.back() < loss_trajectory.front();
  }
};

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// h_ADS(X | params) = h_net(X'): probabilities [K] for a single [C,H,W] image.
Tensor ads_forward(const Tensor& image, const ManipulatorParams& params, const EmbeddedNet& net);

/// Gradient descent on the manipulator parameters of one sample against a frozen net.
SynthesisResult synthesize_sample(const Tensor& image, int label, const EmbeddedNet& net, const SynthesisConfig& config,
                                  ManipulatorKind kind, std::uint64_t seed);

struct BatchOptions {
  int cycle = 0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t variants_per_sample = 1;
};

/// Provenance sidecar entry for one synthesized sample.
struct SampleRecord {
  std::size_t source_index = 0;
  std::size_t variant = 0;
  int cycle = 0;
  ManipulatorKind kind = ManipulatorKind::affine;
  int label = 0;
  int prediction = 0;
  std::size_t steps = 0;
  std::array<int, 2> top2{0, 0};
  bool flipped = false;
  bool loss_reduced = false;
  Real initial_loss = 0;
  Real final_loss = 0;
  Real margin = 0;
  bool aborted = false;
  std::string error;
};

struct BatchSynthesis {
  LabeledDataset dataset;  // in input order, aborted samples omitted
  std::vector<SampleRecord> records;  // one per attempted sample, in input order
  std::size_t aborted = 0;

  double flip_rate() const;
};

/// Mixes a base seed with a stream position; used for every derived seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

/// Per-sample synthesis over a dataset. Output order and content do not depend
/// on the worker count.
BatchSynthesis synthesize_batch(const LabeledDataset& dataset, const EmbeddedNet& net, const SynthesisConfig& config,
                                const BatchOptions& options);

SCNN_NAMESPACE_END
