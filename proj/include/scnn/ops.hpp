#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "scnn/graph.hpp"

SCNN_NAMESPACE_BEGIN

/// Differentiable kernels. Every op records itself on the graph with the
/// context its backward needs; shape errors throw ShapeError naming the op.
namespace ops {

/// [n,k] x [k,m] -> [n,m]
Var matmul(Graph& g, Var a, Var b);
/// Adds bias[c] along axis 1 of a rank-2 or rank-4 tensor.
Var add_bias(Graph& g, Var x, Var bias);
/// Stride-1 convolution with zero "same" padding. x [N,C,H,W], w [O,C,kh,kw], odd kh/kw.
Var conv2d(Graph& g, Var x, Var weight);
Var relu(Graph& g, Var x);
Var sigmoid(Graph& g, Var x);
/// 2x2 window, stride 2, floor on odd extents.
Var max_pool2d(Graph& g, Var x);

struct BatchNormState {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  Real momentum = Real(0.1);
  Real eps = Real(1e-5);
};
/// Normalizes with batch statistics over every axis except 1 and updates the
/// running statistics in place.
Var batch_norm_train(Graph& g, Var x, Var gamma, Var beta, const BatchNormState& state);
/// Deterministic affine map using frozen statistics.
Var batch_norm_inference(Graph& g, Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var,
                         Real eps = Real(1e-5));

/// Row-wise softmax over the last axis of [N,K].
Var softmax(Graph& g, Var logits);
/// Mean cross-entropy of softmax(logits) against integer labels.
Var softmax_cross_entropy(Graph& g, Var logits, std::span<const int> labels);
/// -sum(target * log(max(probs, floor))); target is [N,K] and need not be normalized.
Var weighted_nll(Graph& g, Var probs, const Tensor& target, Real floor = Real(1e-12));

/// Elementwise; b may also be [N,1,H,W] against a [N,C,H,W] a (channel broadcast).
Var add(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var x, Real factor);
Var sum(Graph& g, Var x);
Var reshape(Graph& g, Var x, Shape shape);
/// Nearest-neighbour upsampling of [N,C,H,W] by integer factors.
Var upsample2d(Graph& g, Var x, std::size_t factor_y, std::size_t factor_x);

/// theta [N,6] -> sampling grid [N,H,W,2] holding (x, y) source coordinates in [-1,1].
Var affine_grid(Graph& g, Var theta, std::size_t height, std::size_t width);
/// Bilinear sampling of image [N,C,H,W] at grid [N,Ho,Wo,2]; zero outside the image.
Var grid_sample(Graph& g, Var image, Var grid);

}  // namespace ops

/// Pixel index -> normalized coordinate; the end pixels map exactly to -1 and +1.
Real normalized_coordinate(std::size_t index, std::size_t extent);
/// Normalized coordinate -> continuous pixel coordinate.
Real pixel_coordinate(Real normalized, std::size_t extent);

SCNN_NAMESPACE_END
