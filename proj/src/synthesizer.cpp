#include "scnn/synthesizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "scnn/ops.hpp"

SCNN_NAMESPACE_BEGIN

namespace {

constexpr Real kProbabilityFloor = Real(1e-12);

std::array<int, 2> top_two(std::span<const Real> probs) {
  int first = 0;
  for (int k = 1; k < static_cast<int>(probs.size()); ++k)
    if (probs[k] > probs[first]) first = k;
  int second = first == 0 ? 1 : 0;
  for (int k = 0; k < static_cast<int>(probs.size()); ++k)
    if (k != first && probs[k] > probs[second]) second = k;
  return {first, second};
}

Real label_margin(std::span<const Real> probs, int label) {
  Real best_wrong = -1;
  for (int k = 0; k < static_cast<int>(probs.size()); ++k)
    if (k != label) best_wrong = std::max(best_wrong, probs[k]);
  return std::abs(probs[label] - best_wrong);
}

Tensor batched(const Tensor& image) { return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}); }

// Trainable state for one sample; theta is identity + residual.
struct ManipulatorState {
  ManipulatorKind kind;
  Tensor trainable;
  Tensor kernel;  // grid only
  const SynthesisConfig* config;

  Var build(Graph& g, Var image) {
    Var p = g.parameter(trainable);
    switch (kind) {
      case ManipulatorKind::affine: {
        Var identity = g.input(Tensor({1, 6}, {1, 0, 0, 0, 1, 0}));
        return pipelines::affine(g, image, ops::add(g, identity, p));
      }
      case ManipulatorKind::grid:
        return pipelines::displacement(g, image, p, kernel, config->grid.amplitude);
      case ManipulatorKind::erase:
        return pipelines::erase(g, image, p);
    }
    throw std::logic_error("unreachable manipulator kind");
  }

  ManipulatorParams params(std::size_t width, std::size_t height) const {
    switch (kind) {
      case ManipulatorKind::affine: {
        AffineParams a;
        for (std::size_t i = 0; i < 6; ++i) a.theta[i] += trainable[i];
        return a;
      }
      case ManipulatorKind::grid: {
        DisplacementField field{width, height, trainable, config->grid};
        field.delta.set_requires_grad(false);
        field.delta.clear_grad();
        return field;
      }
      case ManipulatorKind::erase: {
        EraseMask mask{config->erase_cells, trainable, config->erase_count, config->erase_mode};
        mask.values.set_requires_grad(false);
        mask.values.clear_grad();
        return mask;
      }
    }
    throw std::logic_error("unreachable manipulator kind");
  }
};

}  // namespace

TargetSpec compute_targets(std::span<const Real> probs, int label, Real alpha, bool normalize) {
  if (probs.size() < 2) throw std::invalid_argument("compute_targets: need at least two classes");
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
    throw std::out_of_range("compute_targets: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(probs.size()) + ")");
  }
  const auto [predicted, runner_up] = top_two(probs);
  TargetSpec spec{label, predicted, runner_up, alpha, Tensor({probs.size()})};
  spec.target[static_cast<std::size_t>(label)] += Real(1);
  spec.target[static_cast<std::size_t>(spec.nearest_wrong())] += alpha;
  if (normalize) {
    for (Real& v : spec.target.data()) v /= (Real(1) + alpha);
  }
  return spec;
}

Var ads_loss(Graph& g, Var probs, const TargetSpec& target) {
  return ops::weighted_nll(g, probs, target.target.reshaped(g.value(probs).shape()), kProbabilityFloor);
}

Real ads_loss(std::span<const Real> probs, const TargetSpec& target) {
  if (probs.size() != target.target.size()) throw ShapeError("ads_loss: probabilities and target differ in size");
  double loss = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) loss -= target.target[k] * std::log(std::max(probs[k], kProbabilityFloor));
  return static_cast<Real>(loss);
}

std::string to_string(StopRule rule) {
  switch (rule) {
    case StopRule::fixed_steps: return "fixed_steps";
    case StopRule::stop_on_flip: return "stop_on_flip";
    case StopRule::stop_on_margin: return "stop_on_margin";
  }
  return "unknown";
}

StopRule parse_stop_rule(const std::string& name) {
  if (name == "fixed_steps") return StopRule::fixed_steps;
  if (name == "stop_on_flip") return StopRule::stop_on_flip;
  if (name == "stop_on_margin") return StopRule::stop_on_margin;
  throw std::invalid_argument("unknown stop rule '" + name + "'");
}

void SynthesisConfig::validate() const {
  if (!(alpha > 0)) throw std::invalid_argument("synthesis: alpha must be positive");
  if (!(affine_learning_rate > 0 && grid_learning_rate > 0 && erase_learning_rate > 0)) {
    throw std::invalid_argument("synthesis: learning rates must be positive");
  }
  if (margin < 0) throw std::invalid_argument("synthesis: margin must be non-negative");
  if (!(grid.sigma > 0) || grid.width % 2 == 0 || grid.height % 2 == 0) {
    throw std::invalid_argument("synthesis: grid kernel needs odd sizes and positive sigma");
  }
  if (grid.amplitude < 0) throw std::invalid_argument("synthesis: grid amplitude must be non-negative");
  if (erase_cells == 0 || erase_count > erase_cells * erase_cells) {
    throw std::invalid_argument("synthesis: erase_count exceeds the number of mask cells");
  }
}

ManipulatorKind SynthesisConfig::kind_for(std::size_t position) const {
  if (manipulator) return *manipulator;
  return static_cast<ManipulatorKind>(position % 3);
}

Tensor ads_forward(const Tensor& image, const ManipulatorParams& params, const EmbeddedNet& net) {
  if (!net.frozen()) throw FrozenNetError("ads_forward: the embedded net must be frozen");
  const Tensor manipulated = apply_manipulator(image, params);
  Graph g;
  Var probs = net.forward(g, g.input(batched(manipulated)));
  return g.value(probs).reshaped({net.config().classes});
}

SynthesisResult synthesize_sample(const Tensor& image, int label, const EmbeddedNet& net, const SynthesisConfig& config,
                                  ManipulatorKind kind, std::uint64_t seed) {
  if (!net.frozen()) throw FrozenNetError("synthesize_sample: the embedded net must be frozen");
  config.validate();
  if (image.rank() != 3) throw ShapeError("synthesize_sample: expected a [C,H,W] image, got " + to_string(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2);

  std::mt19937_64 rng(seed);
  ManipulatorState state{kind, {}, {}, &config};
  Real learning_rate = 0;
  switch (kind) {
    case ManipulatorKind::affine:
      state.trainable = Tensor({1, 6});
      learning_rate = config.affine_learning_rate;
      break;
    case ManipulatorKind::grid:
      state.trainable = DisplacementField::random(w, h, config.grid, rng).delta;
      state.kernel = gaussian_kernel(config.grid.width, config.grid.height, config.grid.mu, config.grid.sigma);
      learning_rate = config.grid_learning_rate;
      break;
    case ManipulatorKind::erase:
      if (h % config.erase_cells || w % config.erase_cells) {
        throw ShapeError("synthesize_sample: " + std::to_string(config.erase_cells) + " erase cells do not divide " +
                         to_string(image.shape()));
      }
      state.trainable = Tensor({config.erase_cells, config.erase_cells});
      learning_rate = config.erase_learning_rate;
      break;
  }
  state.trainable.set_requires_grad(true);

  OptimizerConfig opt;
  opt.kind = OptimizerKind::adam;
  opt.learning_rate = learning_rate;
  Optimizer optimizer(opt);
  Tensor* trainable[] = {&state.trainable};

  SynthesisResult result;
  result.label = label;
  result.kind = kind;
  const Tensor input = batched(image);
  for (std::size_t step = 0;; ++step) {
    Graph g;
    Var manipulated = state.build(g, g.input(input));
    Var probs = net.forward(g, manipulated);
    const auto p = g.value(probs).data();
    const TargetSpec target = compute_targets(p, label, config.alpha, config.normalize_targets);
    Var loss = ads_loss(g, probs, target);
    const Real loss_value = g.value(loss).item();
    if (!std::isfinite(loss_value)) throw NonFiniteLossError("synthesize_sample: non-finite loss at step " + std::to_string(step));
    result.loss_trajectory.push_back(loss_value);

    if (step == config.max_steps) break;
    const bool flipped = target.predicted != label;
    const bool near_boundary = label_margin(p, label) <= config.margin;
    if (config.stop_rule == StopRule::stop_on_flip && (flipped || near_boundary)) break;
    if (config.stop_rule == StopRule::stop_on_margin && near_boundary) break;

    g.backward(loss);
    optimizer.step(trainable);
    result.steps = step + 1;
  }

  result.params = state.params(w, h);
  if (kind == ManipulatorKind::erase) {
    result.adversarial = erase_apply(image, std::get<EraseMask>(result.params), derive_seed(seed, 1));
  } else {
    result.adversarial = clamp_unit(apply_manipulator(image, result.params));
  }
  const Tensor probs = net.predict(batched(result.adversarial));
  result.top2 = top_two(probs.data());
  result.prediction = result.top2[0];
  result.flipped = result.prediction != label;
  result.margin = label_margin(probs.data(), label);
  return result;
}

double BatchSynthesis::flip_rate() const {
  std::size_t attempted = 0, flipped = 0;
  for (const auto& r : records) {
    if (r.aborted) continue;
    ++attempted;
    flipped += r.flipped ? 1 : 0;
  }
  return attempted ? static_cast<double>(flipped) / static_cast<double>(attempted) : 0.0;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {  // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

BatchSynthesis synthesize_batch(const LabeledDataset& dataset, const EmbeddedNet& net, const SynthesisConfig& config,
                                const BatchOptions& options) {
  if (!net.frozen()) throw FrozenNetError("synthesize_batch: the embedded net must be frozen");
  config.validate();
  const std::size_t variants = std::max<std::size_t>(options.variants_per_sample, 1);
  const std::size_t total = dataset.size() * variants;

  std::vector<SynthesisResult> results(total);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t job = next++; job < total; job = next++) {
      const std::size_t source = job / variants;
      const ManipulatorKind kind = config.kind_for(job);
      try {
        results[job] = synthesize_sample(dataset.image(source), dataset.label(source), net, config, kind,
                                         derive_seed(options.seed, static_cast<std::uint64_t>(options.cycle), job));
      } catch (const std::exception& e) {
        SynthesisResult failed;
        failed.label = dataset.label(source);
        failed.kind = kind;
        failed.aborted = true;
        failed.error = e.what();
        results[job] = std::move(failed);
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, std::max<std::size_t>(total, 1));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(worker);
  }

  BatchSynthesis out;
  out.records.reserve(total);
  for (std::size_t job = 0; job < total; ++job) {
    auto& r = results[job];
    SampleRecord rec;
    rec.source_index = job / variants;
    rec.variant = job % variants;
    rec.cycle = options.cycle;
    rec.kind = r.kind;
    rec.label = r.label;
    rec.aborted = r.aborted;
    rec.error = r.error;
    if (!r.aborted) {
      rec.prediction = r.prediction;
      rec.steps = r.steps;
      rec.top2 = r.top2;
      rec.flipped = r.flipped;
      rec.loss_reduced = r.loss_reduced();
      rec.initial_loss = r.loss_trajectory.front();
      rec.final_loss = r.loss_trajectory.back();
      rec.margin = r.margin;
      out.dataset.add(std::move(r.adversarial), r.label, Provenance::synthesized(options.cycle, r.kind));
    } else {
      ++out.aborted;
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

SCNN_NAMESPACE_END
