#include "scnn/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "scnn/gradcheck.hpp"
#include "scnn/manipulators.hpp"
#include "scnn/model.hpp"
#include "scnn/ops.hpp"
#include "scnn/synthesizer.hpp"

SCNN_NAMESPACE_BEGIN

namespace {

using Rng = std::mt19937_64;
using Inputs = std::vector<Tensor>;
using Forward = std::function<Var(Graph&, const std::vector<Var>&)>;

Tensor normal(Shape shape, Rng& rng, Real stddev = 1) {
  Tensor t(std::move(shape));
  std::normal_distribution<Real> d(0, stddev);
  for (Real& v : t.data()) v = d(rng);
  return t;
}

Tensor uniform(Shape shape, Rng& rng, Real lo, Real hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<Real> d(lo, hi);
  for (Real& v : t.data()) v = d(rng);
  return t;
}

// Normalized coordinates whose pixel positions sit at least 0.05 away from an
// integer, where bilinear sampling is differentiable.
Tensor off_lattice_grid(std::size_t n, std::size_t h, std::size_t w, std::size_t src_h, std::size_t src_w, Rng& rng) {
  Tensor grid({n, h, w, 2});
  std::uniform_int_distribution<int> cell_x(-1, static_cast<int>(src_w) - 1), cell_y(-1, static_cast<int>(src_h) - 1);
  std::uniform_real_distribution<Real> frac(Real(0.05), Real(0.95));
  auto to_norm = [](Real pixel, std::size_t extent) { return pixel * 2 / static_cast<Real>(extent - 1) - 1; };
  for (std::size_t i = 0; i < n * h * w; ++i) {
    grid[2 * i] = to_norm(static_cast<Real>(cell_x(rng)) + frac(rng), src_w);
    grid[2 * i + 1] = to_norm(static_cast<Real>(cell_y(rng)) + frac(rng), src_h);
  }
  return grid;
}

// Random linear functional of the output, so every output element matters.
Var project(Graph& g, Var out, const Tensor& weights) { return ops::sum(g, ops::mul(g, out, g.input(weights))); }

// Max relative error over every differentiable input of one case.
double check_case(Inputs inputs, const std::vector<bool>& differentiable, const Forward& forward, Rng& rng) {
  Tensor projection;
  auto loss_of = [&](const Inputs& values, Graph& g, std::vector<Var>& vars) {
    vars.clear();
    for (std::size_t i = 0; i < values.size(); ++i) vars.push_back(g.input(values[i], differentiable[i]));
    Var out = forward(g, vars);
    if (g.value(out).size() == 1) return out;
    if (projection.empty()) projection = normal(g.value(out).shape(), rng);
    return project(g, out, projection);
  };

  Graph g;
  std::vector<Var> vars;
  Var loss = loss_of(inputs, g, vars);
  g.backward(loss);

  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiable[i]) continue;
    const auto grad = g.grad(vars[i]);
    std::vector<Real> analytic(grad.begin(), grad.end());
    if (analytic.empty()) analytic.assign(inputs[i].size(), 0);
    auto f = [&](const Tensor& x) {
      Inputs perturbed = inputs;
      perturbed[i] = x;
      Graph fg;
      std::vector<Var> fv;
      return fg.value(loss_of(perturbed, fg, fv)).item();
    };
    Tensor x = inputs[i];
    worst = std::max(worst, static_cast<double>(finite_difference_check(f, x, analytic)));
  }
  return worst;
}

struct Case {
  std::string name;
  std::function<Inputs(Rng&)> make;
  std::vector<bool> differentiable;
  Forward forward;
};

NetConfig small_net() {
  NetConfig c;
  c.channels = 1;
  c.height = 12;
  c.width = 12;
  c.filters = {3, 4};
  c.hidden = 8;
  c.classes = 4;
  return c;
}

// Randomizes the running statistics so inference normalization is non-trivial.
void perturb_statistics(EmbeddedNet& net, Rng& rng) {
  std::uniform_real_distribution<Real> mean(-Real(0.2), Real(0.2)), var(Real(0.5), Real(2));
  for (auto& [name, tensor] : net.named_tensors()) {
    if (name.ends_with("running_mean")) for (Real& v : tensor->data()) v = mean(rng);
    if (name.ends_with("running_var")) for (Real& v : tensor->data()) v = var(rng);
  }
}

std::vector<Case> kernel_cases() {
  std::vector<Case> cases;
  auto add = [&](std::string name, std::function<Inputs(Rng&)> make, std::vector<bool> diff, Forward fwd) {
    cases.push_back({std::move(name), std::move(make), std::move(diff), std::move(fwd)});
  };

  add("matmul", [](Rng& r) { return Inputs{normal({3, 4}, r), normal({4, 5}, r)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) { return ops::matmul(g, v[0], v[1]); });
  add("add_bias/rank2", [](Rng& r) { return Inputs{normal({3, 4}, r), normal({4}, r)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) { return ops::add_bias(g, v[0], v[1]); });
  add("add_bias/rank4", [](Rng& r) { return Inputs{normal({2, 3, 3, 4}, r), normal({3}, r)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) { return ops::add_bias(g, v[0], v[1]); });
  add("conv2d/3x3", [](Rng& r) { return Inputs{normal({2, 2, 5, 6}, r), normal({3, 2, 3, 3}, r)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) { return ops::conv2d(g, v[0], v[1]); });
  add("conv2d/5x3", [](Rng& r) { return Inputs{normal({1, 2, 6, 5}, r), normal({2, 2, 5, 3}, r)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) { return ops::conv2d(g, v[0], v[1]); });
  add("relu", [](Rng& r) { return Inputs{normal({2, 3, 4, 4}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) { return ops::relu(g, v[0]); });
  add("sigmoid", [](Rng& r) { return Inputs{normal({2, 3, 4, 4}, r, 2)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) { return ops::sigmoid(g, v[0]); });
  add("max_pool2d", [](Rng& r) { return Inputs{normal({2, 2, 6, 7}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) { return ops::max_pool2d(g, v[0]); });
  add("batch_norm_train",
      [](Rng& r) { return Inputs{normal({4, 3, 3, 3}, r, 2), uniform({3}, r, Real(0.5), Real(1.5)), normal({3}, r)}; },
      {true, true, true}, [](Graph& g, const std::vector<Var>& v) {
        static thread_local Tensor mean({3}), var({3}, Real(1));
        return ops::batch_norm_train(g, v[0], v[1], v[2], {&mean, &var});
      });
  add("batch_norm_inference",
      [](Rng& r) {
        return Inputs{normal({2, 3, 3, 3}, r), uniform({3}, r, Real(0.5), Real(1.5)), normal({3}, r), normal({3}, r),
                      uniform({3}, r, Real(0.5), Real(2))};
      },
      {true, true, true, false, false}, [](Graph& g, const std::vector<Var>& v) {
        return ops::batch_norm_inference(g, v[0], v[1], v[2], g.value(v[3]), g.value(v[4]));
      });
  add("softmax", [](Rng& r) { return Inputs{normal({3, 5}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) { return ops::softmax(g, v[0]); });
  add("softmax_cross_entropy", [](Rng& r) { return Inputs{normal({4, 5}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) {
        static const int labels[] = {0, 3, 4, 1};
        return ops::softmax_cross_entropy(g, v[0], labels);
      });
  add("weighted_nll",
      [](Rng& r) { return Inputs{uniform({2, 4}, r, Real(0.1), Real(1)), uniform({2, 4}, r, Real(0), Real(1.5))}; },
      {true, false}, [](Graph& g, const std::vector<Var>& v) { return ops::weighted_nll(g, v[0], g.value(v[1])); });
  add("add/broadcast", [](Rng& r) { return Inputs{normal({2, 3, 3, 4}, r), normal({2, 1, 3, 4}, r)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) { return ops::add(g, v[0], v[1]); });
  add("mul", [](Rng& r) { return Inputs{normal({2, 5}, r), normal({2, 5}, r)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) { return ops::mul(g, v[0], v[1]); });
  add("mul/broadcast", [](Rng& r) { return Inputs{normal({2, 3, 3, 4}, r), normal({2, 1, 3, 4}, r)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) { return ops::mul(g, v[0], v[1]); });
  add("scale", [](Rng& r) { return Inputs{normal({3, 4}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) { return ops::scale(g, v[0], Real(-2.5)); });
  add("sum", [](Rng& r) { return Inputs{normal({3, 4}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) { return ops::scale(g, ops::sum(g, v[0]), Real(0.7)); });
  add("reshape", [](Rng& r) { return Inputs{normal({2, 6}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) { return ops::reshape(g, v[0], {3, 2, 2}); });
  add("upsample2d", [](Rng& r) { return Inputs{normal({2, 2, 2, 3}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) { return ops::upsample2d(g, v[0], 3, 2); });
  add("affine_grid", [](Rng& r) { return Inputs{normal({2, 6}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) { return ops::affine_grid(g, v[0], 4, 5); });
  add("grid_sample",
      [](Rng& r) { return Inputs{normal({2, 2, 5, 6}, r), off_lattice_grid(2, 4, 3, 5, 6, r)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) { return ops::grid_sample(g, v[0], v[1]); });

  // Manipulator pipelines. Affine parameters start near identity but off the
  // pixel lattice.
  add("manipulator/affine",
      [](Rng& r) {
        Tensor theta = normal({1, 6}, r, Real(0.15));
        theta[0] += 1;
        theta[4] += 1;
        return Inputs{uniform({1, 2, 7, 8}, r, 0, 1), theta};
      },
      {true, true}, [](Graph& g, const std::vector<Var>& v) { return pipelines::affine(g, v[0], v[1]); });
  add("manipulator/grid/smooth", [](Rng& r) { return Inputs{uniform({2, 1, 6, 7}, r, -1, 1)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) {
        return pipelines::smooth(g, v[0], gaussian_kernel(5, 3, Real(0.4), Real(1.5)));
      });
  add("manipulator/grid/compose", [](Rng& r) { return Inputs{normal({2, 1, 4, 5}, r)}; }, {true},
      [](Graph& g, const std::vector<Var>& v) {
        const SamplingGrid base = SamplingGrid::identity(5, 4);
        return pipelines::compose(g, base.coords.reshaped({1, 4, 5, 2}), v[0], Real(0.3));
      });
  add("manipulator/grid",
      [](Rng& r) { return Inputs{uniform({1, 1, 8, 8}, r, 0, 1), uniform({2, 1, 8, 8}, r, -1, 1)}; }, {true, true},
      [](Graph& g, const std::vector<Var>& v) {
        return pipelines::displacement(g, v[0], v[1], gaussian_kernel(5, 5, 0, 2), Real(0.4));
      });
  add("manipulator/erase", [](Rng& r) { return Inputs{uniform({1, 2, 8, 8}, r, 0, 1), normal({4, 4}, r, 2)}; },
      {true, true}, [](Graph& g, const std::vector<Var>& v) { return pipelines::erase(g, v[0], v[1]); });
  return cases;
}

// Train-mode gradient of the embedded net with respect to its own weights.
double check_net_weights(Rng& rng) {
  EmbeddedNet net(small_net(), rng());
  const Tensor images = uniform({3, 1, 12, 12}, rng, 0, 1);
  const int labels[] = {0, 3, 1};
  auto loss_value = [&](Graph& g) {
    return ops::softmax_cross_entropy(g, net.logits(g, g.input(images), Mode::train), labels);
  };
  double worst = 0;
  for (auto* tensor : net.parameters()) {
    for (auto* p : net.parameters()) p->zero_grad();
    Graph g;
    g.backward(loss_value(g));
    const auto grad = tensor->grad();
    const std::vector<Real> analytic(grad.begin(), grad.end());
    auto f = [&](const Tensor&) {
      Graph fg;
      return fg.value(loss_value(fg)).item();
    };
    // A deep stack of relu and max pool has kinks close to random points.
    worst = std::max(worst, static_cast<double>(finite_difference_check(f, *tensor, analytic, Real(1e-6))));
  }
  return worst;
}

// Synthesis loss through manipulator and frozen net, targets held at the
// unperturbed state.
double check_ads(ManipulatorKind kind, Rng& rng) {
  EmbeddedNet net(small_net(), rng());
  perturb_statistics(net, rng);
  net.freeze();
  const Tensor image = uniform({1, 1, 12, 12}, rng, 0, 1);
  const Tensor kernel = gaussian_kernel(9, 9, 0, 2);
  Tensor params;
  switch (kind) {
    case ManipulatorKind::affine:
      params = normal({1, 6}, rng, Real(0.1));
      params[0] += 1;
      params[4] += 1;
      break;
    case ManipulatorKind::grid: params = uniform({2, 1, 12, 12}, rng, -1, 1); break;
    case ManipulatorKind::erase: params = normal({4, 4}, rng); break;
  }
  const int label = static_cast<int>(rng() % 4);
  auto probs_of = [&](Graph& g, Var p) {
    Var x = g.input(image);
    Var manipulated = kind == ManipulatorKind::affine ? pipelines::affine(g, x, p)
                      : kind == ManipulatorKind::grid  ? pipelines::displacement(g, x, p, kernel, Real(0.4))
                                                       : pipelines::erase(g, x, p);
    return net.forward(g, manipulated);
  };
  Graph g;
  Var p = g.input(params, true);
  Var probs = probs_of(g, p);
  const TargetSpec target = compute_targets(g.value(probs).data(), label, Real(0.5));
  g.backward(ads_loss(g, probs, target));
  const auto grad = g.grad(p);
  const std::vector<Real> analytic(grad.begin(), grad.end());
  auto f = [&](const Tensor& x) {
    Graph fg;
    return fg.value(ads_loss(fg, probs_of(fg, fg.input(x)), target)).item();
  };
  return finite_difference_check(f, params, analytic);
}

}  // namespace

std::vector<KernelCheck> run_gradcheck_suite(const GradcheckOptions& options) {
  std::vector<KernelCheck> report;
  auto run = [&](const std::string& name, const std::function<double(Rng&)>& one_seed) {
    KernelCheck check{name, 0, options.threshold, options.seeds};
    for (std::size_t s = 0; s < options.seeds; ++s) {
      Rng rng(derive_seed(options.base_seed, std::hash<std::string>{}(name), s));
      check.max_rel_error = std::max(check.max_rel_error, one_seed(rng));
    }
    report.push_back(check);
  };
  for (const Case& c : kernel_cases()) {
    run(c.name, [&](Rng& rng) { return check_case(c.make(rng), c.differentiable, c.forward, rng); });
  }
  run("embedded_net/weights", check_net_weights);
  run("ads_loss/affine", [](Rng& rng) { return check_ads(ManipulatorKind::affine, rng); });
  run("ads_loss/grid", [](Rng& rng) { return check_ads(ManipulatorKind::grid, rng); });
  run("ads_loss/erase", [](Rng& rng) { return check_ads(ManipulatorKind::erase, rng); });
  return report;
}

SCNN_NAMESPACE_END
