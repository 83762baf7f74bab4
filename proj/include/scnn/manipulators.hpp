#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <variant>

#include "scnn/graph.hpp"
#include "scnn/tensor.hpp"

SCNN_NAMESPACE_BEGIN

// Images are [C,H,W] tensors with values in [0,1]. Differentiable pipelines
// work on [1,C,H,W] graph nodes; clamping happens only on export.

enum class ManipulatorKind { affine, grid, erase };

std::string to_string(ManipulatorKind kind);
ManipulatorKind parse_manipulator_kind(const std::string& name);

/// Per-pixel source coordinates (x, y) in normalized [-1,1] space.
struct SamplingGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  Tensor coords;  // [H, W, 2]

  static SamplingGrid identity(std::size_t width, std::size_t height);
  Real x(std::size_t row, std::size_t col) const { return coords[(row * width + col) * 2]; }
  Real y(std::size_t row, std::size_t col) const { return coords[(row * width + col) * 2 + 1]; }
};

struct AffineParams {
  std::array<Real, 6> theta{1, 0, 0, 0, 1, 0};

  static AffineParams identity() { return {}; }
};

struct GridKernelConfig {
  std::size_t width = 9;
  std::size_t height = 9;
  Real mu = 0;
  Real sigma = 2;
  /// Scale applied to the smoothed field before it is added to the grid.
  Real amplitude = Real(0.1);
};

/// Trainable null space. delta is [2,1,H,W]: an x-field and a y-field, each
/// smoothed by the same fixed Gaussian so both axes deform independently.
struct DisplacementField {
  std::size_t width = 0;
  std::size_t height = 0;
  Tensor delta;
  GridKernelConfig kernel;

  /// delta ~ U(-1, 1)
  static DisplacementField random(std::size_t width, std::size_t height, const GridKernelConfig& kernel,
                                  std::mt19937_64& rng);
  static DisplacementField zero(std::size_t width, std::size_t height, const GridKernelConfig& kernel);
};

enum class EraseMode { zero, uniform_noise };

std::string to_string(EraseMode mode);
EraseMode parse_erase_mode(const std::string& name);

/// N x N mask of raw logits; the multiplied mask is sigmoid(values).
struct EraseMask {
  std::size_t cells = 4;
  Tensor values;  // [N, N]
  std::size_t erase_count = 2;
  EraseMode mode = EraseMode::zero;

  static EraseMask uniform(std::size_t cells, Real logit, std::size_t erase_count = 2, EraseMode mode = EraseMode::zero);
};

using ManipulatorParams = std::variant<AffineParams, DisplacementField, EraseMask>;

ManipulatorKind kind_of(const ManipulatorParams& params);

SamplingGrid affine_grid(const AffineParams& params, std::size_t width, std::size_t height);

/// [h, w] kernel with entries proportional to
/// exp(-((i - cx - mu)^2 + (j - cy - mu)^2) / (2 sigma^2)), normalized to sum 1.
Tensor gaussian_kernel(std::size_t width, std::size_t height, Real mu, Real sigma);

/// mu = delta (*) kernel, zero padded, same size. Returns [2,1,H,W].
Tensor smooth_field(const DisplacementField& field);

/// G_t = G_i + amplitude * mu, with mu [2,1,H,W] displacing x and y respectively.
SamplingGrid compose_grid(const SamplingGrid& base, const Tensor& mu, Real amplitude);

/// Bilinear sampling of a [C,H,W] image; out-of-range taps read zero.
Tensor grid_sample(const Tensor& image, const SamplingGrid& grid);

struct GridSampleGradients {
  Tensor image;  // [C,H,W]
  Tensor grid;   // [H,W,2]
};
GridSampleGradients grid_sample_backward(const Tensor& image, const SamplingGrid& grid, const Tensor& upstream);

/// image * upsample(sigmoid(M)), broadcast over channels.
Tensor erase_forward(const Tensor& image, const EraseMask& mask);

/// Replaces the erase_count cells with the lowest trained mask values by zeros
/// or U(0,1) noise. Cells tie-break by index. Not differentiable.
Tensor erase_apply(const Tensor& image, const EraseMask& mask, std::uint64_t noise_seed = 0);

/// Cell indices erase_apply would remove, in removal order.
std::vector<std::size_t> erase_selection(const EraseMask& mask);

/// X' for the differentiable branch selected by params.
Tensor apply_manipulator(const Tensor& image, const ManipulatorParams& params);

/// Clamps a sampled image into [0,1] for export.
Tensor clamp_unit(Tensor image);

namespace pipelines {

/// image [1,C,H,W], theta [1,6]
Var affine(Graph& g, Var image, Var theta);
/// delta [2,1,H,W]; kernel is the [h,w] Gaussian (flipped internally for true convolution).
Var displacement(Graph& g, Var image, Var delta, const Tensor& kernel, Real amplitude);
/// Smoothed field only: [2,1,H,W].
Var smooth(Graph& g, Var delta, const Tensor& kernel);
/// base [1,H,W,2] constant, mu [2,1,H,W] -> [1,H,W,2]
Var compose(Graph& g, const Tensor& base, Var mu, Real amplitude);
/// mask [N,N] logits -> image * upsample(sigmoid(mask))
Var erase(Graph& g, Var image, Var mask);

}  // namespace pipelines

SCNN_NAMESPACE_END
