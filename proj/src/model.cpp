#include "scnn/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <stdexcept>

#include "scnn/ops.hpp"

SCNN_NAMESPACE_BEGIN

std::string to_string(NetScale scale) { return scale == NetScale::full ? "full" : "desk"; }

NetScale parse_net_scale(const std::string& name) {
  if (name == "full") return NetScale::full;
  if (name == "desk") return NetScale::desk;
  throw std::invalid_argument("unknown net scale '" + name + "'");
}

NetConfig NetConfig::full() { return NetConfig{}; }

NetConfig NetConfig::desk() {
  NetConfig cfg;
  cfg.filters = {16, 32, 64};
  cfg.hidden = 128;
  return cfg;
}

NetConfig NetConfig::for_scale(NetScale scale) { return scale == NetScale::full ? full() : desk(); }

namespace {

void he_normal(Tensor& t, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (Real& v : t.data()) v = static_cast<Real>(dist(rng));
}

}  // namespace

EmbeddedNet::EmbeddedNet(NetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (config_.filters.empty() || config_.classes < 2 || config_.hidden == 0 || config_.kernel_size % 2 == 0) {
    throw std::invalid_argument("EmbeddedNet: needs at least one conv block, two classes and an odd kernel");
  }
  std::mt19937_64 rng(seed);
  std::size_t in_channels = config_.channels, h = config_.height, w = config_.width;
  const std::size_t k = config_.kernel_size;
  for (std::size_t filters : config_.filters) {
    ConvBlock block{Tensor({filters, in_channels, k, k}), Tensor({filters}),   Tensor({filters}, Real(1)),
                    Tensor({filters}),                   Tensor({filters}),   Tensor({filters}, Real(1))};
    he_normal(block.weight, in_channels * k * k, rng);
    blocks_.push_back(std::move(block));
    in_channels = filters;
    h /= 2;
    w /= 2;
    if (h == 0 || w == 0) throw std::invalid_argument("EmbeddedNet: input too small for the pooling stack");
  }
  const std::size_t flat = in_channels * h * w;
  hidden_weight_ = Tensor({flat, config_.hidden});
  hidden_bias_ = Tensor({config_.hidden});
  output_weight_ = Tensor({config_.hidden, config_.classes});
  output_bias_ = Tensor({config_.classes});
  he_normal(hidden_weight_, flat, rng);
  he_normal(output_weight_, config_.hidden, rng);
  unfreeze();
}

void EmbeddedNet::check_input(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != config_.channels || images.dim(2) != config_.height ||
      images.dim(3) != config_.width) {
    throw ShapeError("EmbeddedNet: input " + to_string(images.shape()) + " does not match [N, " +
                     std::to_string(config_.channels) + ", " + std::to_string(config_.height) + ", " +
                     std::to_string(config_.width) + "]");
  }
}

template <class Self, class Bind>
Var EmbeddedNet::build(Self& self, Graph& g, Var images, Mode mode, Bind bind) {
  self.check_input(g.value(images));
  Var x = images;
  for (auto& block : self.blocks_) {
    x = ops::add_bias(g, ops::conv2d(g, x, bind(block.weight)), bind(block.bias));
    if constexpr (std::is_const_v<Self>) {
      x = ops::batch_norm_inference(g, x, bind(block.gamma), bind(block.beta), block.running_mean, block.running_var);
    } else {
      if (mode == Mode::train) {
        x = ops::batch_norm_train(g, x, bind(block.gamma), bind(block.beta), {&block.running_mean, &block.running_var});
      } else {
        x = ops::batch_norm_inference(g, x, bind(block.gamma), bind(block.beta), block.running_mean, block.running_var);
      }
    }
    x = ops::max_pool2d(g, ops::relu(g, x));
  }
  const std::size_t n = g.value(x).dim(0);
  x = ops::reshape(g, x, {n, g.value(x).size() / n});
  x = ops::relu(g, ops::add_bias(g, ops::matmul(g, x, bind(self.hidden_weight_)), bind(self.hidden_bias_)));
  return ops::add_bias(g, ops::matmul(g, x, bind(self.output_weight_)), bind(self.output_bias_));
}

Var EmbeddedNet::logits(Graph& g, Var images, Mode mode) {
  if (mode == Mode::train && frozen_) throw FrozenNetError("EmbeddedNet: train-mode forward on a frozen net");
  return build(*this, g, images, mode, [&g](Tensor& t) { return g.parameter(t); });
}

Var EmbeddedNet::logits(Graph& g, Var images) const {
  return build(*this, g, images, Mode::inference, [&g](const Tensor& t) { return g.reference(t); });
}

Var EmbeddedNet::forward(Graph& g, Var images) const { return ops::softmax(g, logits(g, images)); }

Tensor EmbeddedNet::predict(const Tensor& images) const {
  Graph g;
  return g.value(forward(g, g.input(images)));
}

void EmbeddedNet::freeze() {
  frozen_ = true;
  for (Tensor* t : parameters()) {
    t->set_requires_grad(false);
    t->clear_grad();
  }
}

void EmbeddedNet::unfreeze() {
  frozen_ = false;
  for (Tensor* t : parameters()) t->set_requires_grad(true);
}

std::vector<Tensor*> EmbeddedNet::parameters() {
  std::vector<Tensor*> out;
  for (auto& b : blocks_) {
    out.insert(out.end(), {&b.weight, &b.bias, &b.gamma, &b.beta});
  }
  out.insert(out.end(), {&hidden_weight_, &hidden_bias_, &output_weight_, &output_bias_});
  return out;
}

std::vector<std::pair<std::string, Tensor*>> EmbeddedNet::named_tensors() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    auto& b = blocks_[i];
    const std::string p = "block" + std::to_string(i) + ".";
    out.emplace_back(p + "conv.weight", &b.weight);
    out.emplace_back(p + "conv.bias", &b.bias);
    out.emplace_back(p + "bn.gamma", &b.gamma);
    out.emplace_back(p + "bn.beta", &b.beta);
    out.emplace_back(p + "bn.running_mean", &b.running_mean);
    out.emplace_back(p + "bn.running_var", &b.running_var);
  }
  out.emplace_back("hidden.weight", &hidden_weight_);
  out.emplace_back("hidden.bias", &hidden_bias_);
  out.emplace_back("output.weight", &output_weight_);
  out.emplace_back("output.bias", &output_bias_);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> EmbeddedNet::named_tensors() const {
  auto mutable_view = const_cast<EmbeddedNet*>(this)->named_tensors();
  return {mutable_view.begin(), mutable_view.end()};
}

std::uint64_t EmbeddedNet::checksum() const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const auto& [name, tensor] : named_tensors()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(tensor->data().data());
    for (std::size_t i = 0; i < tensor->size() * sizeof(Real); ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  }
  return hash;
}

void LabeledDataset::add(Tensor image, int label, Provenance provenance) {
  if (image.rank() != 3) throw ShapeError("LabeledDataset: expected a [C,H,W] image, got " + to_string(image.shape()));
  if (!images_.empty() && image.shape() != images_.front().shape()) {
    throw ShapeError("LabeledDataset: image " + to_string(image.shape()) + " differs from " +
                     to_string(images_.front().shape()));
  }
  if (label < 0) throw std::out_of_range("LabeledDataset: negative label " + std::to_string(label));
  image.set_requires_grad(false);
  image.clear_grad();
  images_.push_back(std::move(image));
  labels_.push_back(label);
  provenance_.push_back(provenance);
}

void LabeledDataset::append(const LabeledDataset& other) {
  for (std::size_t i = 0; i < other.size(); ++i) add(other.images_[i], other.labels_[i], other.provenance_[i]);
}

Shape LabeledDataset::image_shape() const { return images_.empty() ? Shape{} : images_.front().shape(); }

Tensor LabeledDataset::batch(std::span<const std::size_t> indices) const {
  const Shape s = image_shape();
  if (s.empty()) throw std::logic_error("LabeledDataset: batch from an empty dataset");
  const std::size_t per = shape_size(s);
  Tensor out({indices.size(), s[0], s[1], s[2]});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto src = images_.at(indices[i]).data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<int> LabeledDataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(labels_.at(i));
  return out;
}

void LabeledDataset::validate(std::size_t classes) const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || static_cast<std::size_t>(labels_[i]) >= classes) {
      throw std::out_of_range("LabeledDataset: label " + std::to_string(labels_[i]) + " at index " + std::to_string(i) +
                              " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

TrainingHistory train(EmbeddedNet& net, const LabeledDataset& dataset, const TrainOptions& options) {
  if (net.frozen()) throw FrozenNetError("train: the embedded net is frozen");
  TrainingHistory history;
  if (options.epochs == 0) return history;
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  if (options.batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  dataset.validate(net.config().classes);

  Optimizer optimizer(options.optimizer);
  auto params = net.parameters();
  std::mt19937_64 rng(options.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const std::vector<int> labels = dataset.batch_labels(idx);
      Graph g;
      Var logits = net.logits(g, g.input(dataset.batch(idx)), Mode::train);
      Var loss = ops::softmax_cross_entropy(g, logits, labels);
      g.backward(loss);
      optimizer.step(params);

      loss_sum += static_cast<double>(g.value(loss).item()) * static_cast<double>(idx.size());
      const Tensor& out = g.value(logits);
      const std::size_t k = out.dim(1);
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto row = out.data().subspan(r * k, k);
        if (std::max_element(row.begin(), row.end()) - row.begin() == labels[r]) ++correct;
      }
    }
    EpochRecord record;
    record.epoch = epoch + 1;
    record.train_accuracy = static_cast<double>(correct) / static_cast<double>(dataset.size());
    record.train_loss = loss_sum / static_cast<double>(dataset.size());
    if (options.test_set && (options.eval_every_epoch || epoch + 1 == options.epochs)) {
      const Evaluation eval = evaluate(net, *options.test_set);
      record.test_accuracy = eval.accuracy;
      record.test_loss = eval.mean_loss;
    }
    record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(record);
  }
  return history;
}

Evaluation evaluate(const EmbeddedNet& net, const LabeledDataset& dataset, std::size_t batch_size) {
  if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
  dataset.validate(net.config().classes);
  std::size_t correct = 0;
  double loss = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < dataset.size(); begin += batch_size) {
    const std::size_t end = std::min(dataset.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor probs = net.predict(dataset.batch(idx));
    const std::size_t k = probs.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = probs.data().subspan(r * k, k);
      const int label = dataset.label(idx[r]);
      if (std::max_element(row.begin(), row.end()) - row.begin() == label) ++correct;
      loss -= std::log(std::max(static_cast<double>(row[static_cast<std::size_t>(label)]), 1e-12));
    }
  }
  const double n = static_cast<double>(dataset.size());
  return {static_cast<double>(correct) / n, loss / n};
}

SCNN_NAMESPACE_END
