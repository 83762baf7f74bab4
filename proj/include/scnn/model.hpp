#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scnn/graph.hpp"
#include "scnn/manipulators.hpp"
#include "scnn/optimizer.hpp"

SCNN_NAMESPACE_BEGIN

enum class NetScale { full, desk };

std::string to_string(NetScale scale);
NetScale parse_net_scale(const std::string& name);

struct NetConfig {
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  std::vector<std::size_t> filters{64, 128, 256};
  std::size_t hidden = 512;
  std::size_t classes = 10;
  std::size_t kernel_size = 3;

  /// 64/128/256 filters, 512 hidden units.
  static NetConfig full();
  /// 16/32/64 filters, 128 hidden units.
  static NetConfig desk();
  static NetConfig for_scale(NetScale scale);

  bool operator==(const NetConfig&) const = default;
};

enum class Mode { train, inference };

/// [conv 3x3 -> batch norm -> relu -> max pool 2x2] per filter count, then
/// fc(hidden) -> relu -> fc(classes) -> softmax.
class EmbeddedNet {
 public:
  EmbeddedNet(NetConfig config, std::uint64_t seed);

  const NetConfig& config() const { return config_; }

  /// Trainable path. Mode::train normalizes with batch statistics and updates
  /// the running statistics.
  Var logits(Graph& g, Var images, Mode mode);
  /// Read-only inference path; weights never receive gradients.
  Var logits(Graph& g, Var images) const;
  /// Class probabilities, inference mode.
  Var forward(Graph& g, Var images) const;
  /// [N,C,H,W] -> [N,K] probabilities.
  Tensor predict(const Tensor& images) const;

  /// Marks every weight immutable and pins the normalization statistics.
  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

  /// Trainable tensors, in a fixed order.
  std::vector<Tensor*> parameters();
  /// Every persisted tensor (weights and running statistics) with a stable name.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

  /// FNV-1a over every persisted tensor's bytes.
  std::uint64_t checksum() const;

 private:
  struct ConvBlock {
    Tensor weight, bias, gamma, beta, running_mean, running_var;
  };

  template <class Self, class Bind>
  static Var build(Self& self, Graph& g, Var images, Mode mode, Bind bind);
  void check_input(const Tensor& images) const;

  NetConfig config_;
  std::vector<ConvBlock> blocks_;
  Tensor hidden_weight_, hidden_bias_, output_weight_, output_bias_;
  bool frozen_ = false;
};

struct Provenance {
  enum class Source { primary, synthesized };
  Source source = Source::primary;
  int cycle = 0;
  ManipulatorKind manipulator = ManipulatorKind::affine;

  static Provenance primary() { return {}; }
  static Provenance synthesized(int cycle, ManipulatorKind kind) { return {Source::synthesized, cycle, kind}; }
  bool operator==(const Provenance&) const = default;
};

/// Shape-homogeneous [C,H,W] images with integer labels.
class LabeledDataset {
 public:
  void add(Tensor image, int label, Provenance provenance = Provenance::primary());
  void append(const LabeledDataset& other);

  std::size_t size() const { return images_.size(); }
  bool empty() const { return images_.empty(); }
  const Tensor& image(std::size_t i) const { return images_.at(i); }
  int label(std::size_t i) const { return labels_.at(i); }
  const Provenance& provenance(std::size_t i) const { return provenance_.at(i); }
  const std::vector<int>& labels() const { return labels_; }
  Shape image_shape() const;

  /// Stacks the selected images into [B,C,H,W].
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;

  /// Throws if any label falls outside [0, classes).
  void validate(std::size_t classes) const;

 private:
  std::vector<Tensor> images_;
  std::vector<int> labels_;
  std::vector<Provenance> provenance_;
};

struct TrainOptions {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  OptimizerConfig optimizer{};
  std::uint64_t seed = 0;
  /// Evaluated after the last epoch (or every epoch with eval_every_epoch).
  const LabeledDataset* test_set = nullptr;
  bool eval_every_epoch = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_accuracy = 0;
  double train_loss = 0;
  std::optional<double> test_accuracy;
  std::optional<double> test_loss;
  double wall_ms = 0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
};

struct Evaluation {
  double accuracy = 0;
  double mean_loss = 0;
};

class FrozenNetError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Minibatch cross-entropy descent.
TrainingHistory train(EmbeddedNet& net, const LabeledDataset& dataset, const TrainOptions& options);
Evaluation evaluate(const EmbeddedNet& net, const LabeledDataset& dataset, std::size_t batch_size = 256);

SCNN_NAMESPACE_END
