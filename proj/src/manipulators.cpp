#include "scnn/manipulators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "scnn/ops.hpp"

SCNN_NAMESPACE_BEGIN

namespace {

void expect_image(const char* op, const Tensor& image) {
  if (image.rank() != 3) throw ShapeError(std::string(op) + ": expected a [C,H,W] image, got " + to_string(image.shape()));
}

Tensor batched(const Tensor& image) { return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}); }

Tensor unbatched(const Tensor& image) { return image.reshaped({image.dim(1), image.dim(2), image.dim(3)}); }

Tensor flipped_kernel(const Tensor& kernel) {
  const std::size_t h = kernel.dim(0), w = kernel.dim(1);
  Tensor out({1, 1, h, w});
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) out[i * w + j] = kernel[(h - 1 - i) * w + (w - 1 - j)];
  return out;
}

}  // namespace

std::string to_string(ManipulatorKind kind) {
  switch (kind) {
    case ManipulatorKind::affine: return "affine";
    case ManipulatorKind::grid: return "grid";
    case ManipulatorKind::erase: return "erase";
  }
  return "unknown";
}

ManipulatorKind parse_manipulator_kind(const std::string& name) {
  if (name == "affine") return ManipulatorKind::affine;
  if (name == "grid") return ManipulatorKind::grid;
  if (name == "erase") return ManipulatorKind::erase;
  throw std::invalid_argument("unknown manipulator '" + name + "'");
}

std::string to_string(EraseMode mode) { return mode == EraseMode::zero ? "zero" : "uniform_noise"; }

EraseMode parse_erase_mode(const std::string& name) {
  if (name == "zero") return EraseMode::zero;
  if (name == "uniform_noise") return EraseMode::uniform_noise;
  throw std::invalid_argument("unknown erase mode '" + name + "'");
}

SamplingGrid SamplingGrid::identity(std::size_t width, std::size_t height) {
  return affine_grid(AffineParams::identity(), width, height);
}

DisplacementField DisplacementField::random(std::size_t width, std::size_t height, const GridKernelConfig& kernel,
                                            std::mt19937_64& rng) {
  DisplacementField field = zero(width, height, kernel);
  std::uniform_real_distribution<double> uniform(-1.0, 1.0);
  for (Real& v : field.delta.data()) v = static_cast<Real>(uniform(rng));
  return field;
}

DisplacementField DisplacementField::zero(std::size_t width, std::size_t height, const GridKernelConfig& kernel) {
  return DisplacementField{width, height, Tensor({2, 1, height, width}), kernel};
}

EraseMask EraseMask::uniform(std::size_t cells, Real logit, std::size_t erase_count, EraseMode mode) {
  return EraseMask{cells, Tensor({cells, cells}, logit), erase_count, mode};
}

ManipulatorKind kind_of(const ManipulatorParams& params) {
  return static_cast<ManipulatorKind>(params.index());
}

SamplingGrid affine_grid(const AffineParams& params, std::size_t width, std::size_t height) {
  Graph g;
  Var theta = g.input(Tensor({1, 6}, std::vector<Real>(params.theta.begin(), params.theta.end())));
  Var grid = ops::affine_grid(g, theta, height, width);
  return SamplingGrid{width, height, g.value(grid).reshaped({height, width, 2})};
}

Tensor gaussian_kernel(std::size_t width, std::size_t height, Real mu, Real sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_kernel: sigma must be positive");
  if (width % 2 == 0 || height % 2 == 0) throw std::invalid_argument("gaussian_kernel: sizes must be odd");
  const double cx = (static_cast<double>(width) - 1) / 2, cy = (static_cast<double>(height) - 1) / 2;
  std::vector<double> raw(width * height);
  for (std::size_t j = 0; j < height; ++j)
    for (std::size_t i = 0; i < width; ++i) {
      const double dx = static_cast<double>(i) - cx - mu, dy = static_cast<double>(j) - cy - mu;
      raw[j * width + i] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
  Tensor out({height, width});
  for (std::size_t k = 0; k < raw.size(); ++k) out[k] = static_cast<Real>(raw[k] / total);
  return out;
}

Tensor smooth_field(const DisplacementField& field) {
  Graph g;
  const Tensor kernel = gaussian_kernel(field.kernel.width, field.kernel.height, field.kernel.mu, field.kernel.sigma);
  return g.value(pipelines::smooth(g, g.reference(field.delta), kernel));
}

SamplingGrid compose_grid(const SamplingGrid& base, const Tensor& mu, Real amplitude) {
  Graph g;
  Var out = pipelines::compose(g, base.coords.reshaped({1, base.height, base.width, 2}), g.reference(mu), amplitude);
  return SamplingGrid{base.width, base.height, g.value(out).reshaped({base.height, base.width, 2})};
}

Tensor grid_sample(const Tensor& image, const SamplingGrid& grid) {
  expect_image("grid_sample", image);
  Graph g;
  Var out = ops::grid_sample(g, g.input(batched(image)), g.input(grid.coords.reshaped({1, grid.height, grid.width, 2})));
  return unbatched(g.value(out));
}

GridSampleGradients grid_sample_backward(const Tensor& image, const SamplingGrid& grid, const Tensor& upstream) {
  expect_image("grid_sample_backward", image);
  Graph g;
  Var img = g.input(batched(image), true);
  Var grd = g.input(grid.coords.reshaped({1, grid.height, grid.width, 2}), true);
  Var out = ops::grid_sample(g, img, grd);
  if (upstream.size() != g.value(out).size()) {
    throw ShapeError("grid_sample_backward: upstream " + to_string(upstream.shape()) + " vs output " +
                     to_string(g.value(out).shape()));
  }
  // sum(out * upstream) has d/d(out) = upstream
  Var weighted = ops::sum(g, ops::mul(g, out, g.input(upstream.reshaped(g.value(out).shape()))));
  g.backward(weighted);
  GridSampleGradients grads{Tensor(image.shape()), Tensor(grid.coords.shape())};
  auto copy = [](std::span<const Real> src, Tensor& dst) {
    if (!src.empty()) std::copy(src.begin(), src.end(), dst.data().begin());
  };
  copy(g.grad(img), grads.image);
  copy(g.grad(grd), grads.grid);
  return grads;
}

Tensor erase_forward(const Tensor& image, const EraseMask& mask) {
  expect_image("erase_forward", image);
  Graph g;
  Var out = pipelines::erase(g, g.input(batched(image)), g.reference(mask.values));
  return unbatched(g.value(out));
}

std::vector<std::size_t> erase_selection(const EraseMask& mask) {
  const std::size_t total = mask.cells * mask.cells;
  if (mask.erase_count > total) {
    throw std::invalid_argument("erase_apply: erase_count " + std::to_string(mask.erase_count) + " exceeds " +
                                std::to_string(total) + " cells");
  }
  if (mask.values.size() != total) throw ShapeError("erase mask values do not match " + std::to_string(mask.cells) + "^2 cells");
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&mask](std::size_t a, std::size_t b) { return mask.values[a] < mask.values[b]; });
  order.resize(mask.erase_count);
  return order;
}

Tensor erase_apply(const Tensor& image, const EraseMask& mask, std::uint64_t noise_seed) {
  expect_image("erase_apply", image);
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (mask.cells == 0 || h % mask.cells || w % mask.cells) {
    throw ShapeError("erase_apply: " + std::to_string(mask.cells) + " cells do not divide image " + to_string(image.shape()));
  }
  const auto selected = erase_selection(mask);
  const std::size_t bh = h / mask.cells, bw = w / mask.cells;
  Tensor out = image;
  out.set_requires_grad(false);
  out.clear_grad();
  std::mt19937_64 rng(noise_seed);
  std::uniform_real_distribution<double> noise(0.0, 1.0);
  for (std::size_t cell : selected) {
    const std::size_t cy = cell / mask.cells, cx = cell % mask.cells;
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = cy * bh; y < (cy + 1) * bh; ++y)
        for (std::size_t x = cx * bw; x < (cx + 1) * bw; ++x)
          out[(ch * h + y) * w + x] = mask.mode == EraseMode::zero ? Real(0) : static_cast<Real>(noise(rng));
  }
  return out;
}

Tensor apply_manipulator(const Tensor& image, const ManipulatorParams& params) {
  expect_image("apply_manipulator", image);
  const std::size_t h = image.dim(1), w = image.dim(2);
  Graph g;
  Var x = g.input(batched(image));
  Var out = std::visit(
      [&](const auto& p) -> Var {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, AffineParams>) {
          return pipelines::affine(g, x, g.input(Tensor({1, 6}, std::vector<Real>(p.theta.begin(), p.theta.end()))));
        } else if constexpr (std::is_same_v<T, DisplacementField>) {
          if (p.width != w || p.height != h) {
            throw ShapeError("apply_manipulator: displacement field " + std::to_string(p.width) + "x" +
                             std::to_string(p.height) + " does not match image " + to_string(image.shape()));
          }
          const Tensor kernel = gaussian_kernel(p.kernel.width, p.kernel.height, p.kernel.mu, p.kernel.sigma);
          return pipelines::displacement(g, x, g.reference(p.delta), kernel, p.kernel.amplitude);
        } else {
          return pipelines::erase(g, x, g.reference(p.values));
        }
      },
      params);
  return unbatched(g.value(out));
}

Tensor clamp_unit(Tensor image) {
  for (Real& v : image.data()) v = std::clamp(v, Real(0), Real(1));
  return image;
}

namespace pipelines {

Var affine(Graph& g, Var image, Var theta) {
  const Tensor& img = g.value(image);
  if (img.rank() != 4) throw ShapeError("affine pipeline: expected [N,C,H,W] image, got " + to_string(img.shape()));
  Var grid = ops::affine_grid(g, theta, img.dim(2), img.dim(3));
  return ops::grid_sample(g, image, grid);
}

Var smooth(Graph& g, Var delta, const Tensor& kernel) {
  if (kernel.rank() != 2) throw ShapeError("smooth: expected [h,w] kernel, got " + to_string(kernel.shape()));
  return ops::conv2d(g, delta, g.input(flipped_kernel(kernel)));
}

Var compose(Graph& g, const Tensor& base, Var mu, Real amplitude) {
  const Tensor& m = g.value(mu);
  if (base.rank() != 4 || base.dim(0) != 1 || base.dim(3) != 2 || m.rank() != 4 || m.dim(0) != 2 || m.dim(1) != 1 ||
      m.dim(2) != base.dim(1) || m.dim(3) != base.dim(2)) {
    throw ShapeError("compose_grid: incompatible shapes " + to_string(base.shape()) + " and " + to_string(m.shape()));
  }
  const std::size_t plane = base.dim(1) * base.dim(2);
  Tensor out = base;
  out.set_requires_grad(false);
  out.clear_grad();
  for (std::size_t p = 0; p < plane; ++p) {
    out[p * 2] += amplitude * m[p];
    out[p * 2 + 1] += amplitude * m[plane + p];
  }
  return g.record("compose_grid", std::move(out), {mu}, [plane, amplitude](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto dm = ctx.input_grad(0);
    for (std::size_t p = 0; p < plane; ++p) {
      dm[p] += amplitude * up[p * 2];
      dm[plane + p] += amplitude * up[p * 2 + 1];
    }
  });
}

Var displacement(Graph& g, Var image, Var delta, const Tensor& kernel, Real amplitude) {
  const Tensor& img = g.value(image);
  if (img.rank() != 4 || img.dim(0) != 1) {
    throw ShapeError("displacement pipeline: expected [1,C,H,W] image, got " + to_string(img.shape()));
  }
  const SamplingGrid base = SamplingGrid::identity(img.dim(3), img.dim(2));
  Var mu = smooth(g, delta, kernel);
  Var grid = compose(g, base.coords.reshaped({1, base.height, base.width, 2}), mu, amplitude);
  return ops::grid_sample(g, image, grid);
}

Var erase(Graph& g, Var image, Var mask) {
  const Tensor& img = g.value(image);
  const Tensor& m = g.value(mask);
  if (img.rank() != 4 || m.rank() != 2 || m.dim(0) != m.dim(1)) {
    throw ShapeError("erase pipeline: incompatible shapes " + to_string(img.shape()) + " and " + to_string(m.shape()));
  }
  const std::size_t cells = m.dim(0), h = img.dim(2), w = img.dim(3);
  if (cells == 0 || h % cells || w % cells) {
    throw ShapeError("erase pipeline: " + std::to_string(cells) + " cells do not divide image " + to_string(img.shape()));
  }
  Var squashed = ops::sigmoid(g, ops::reshape(g, mask, {1, 1, cells, cells}));
  Var upsampled = ops::upsample2d(g, squashed, h / cells, w / cells);
  if (img.dim(0) != 1) throw ShapeError("erase pipeline: expected a single image, got " + to_string(img.shape()));
  return ops::mul(g, image, upsampled);
}

}  // namespace pipelines

SCNN_NAMESPACE_END
