#include "scnn/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

SCNN_NAMESPACE_BEGIN

namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

void expect_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

void accumulate(std::span<Real> dst, std::span<const Real> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Extent of axis 1 and the product of everything after it.
struct ChannelLayout {
  std::size_t outer, channels, inner;
};

ChannelLayout channel_layout(const char* op, const Tensor& x) {
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError(std::string(op) + ": expected rank 2 or 4, got shape " + to_string(x.shape()));
  }
  const std::size_t inner = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  return {x.dim(0), x.dim(1), inner};
}

bool channel_broadcast(const Shape& a, const Shape& b) {
  return a.size() == 4 && b.size() == 4 && b[1] == 1 && a[0] == b[0] && a[2] == b[2] && a[3] == b[3];
}

struct ConvGeometry {
  std::size_t n, c, h, w, o, kh, kw;
  std::size_t rows() const { return c * kh * kw; }
  std::size_t cols() const { return n * h * w; }
};

void im2col(const ConvGeometry& geo, const Real* x, Real* col) {
  const std::size_t hw = geo.h * geo.w;
  const long ph = static_cast<long>(geo.kh / 2), pw = static_cast<long>(geo.kw / 2);
  for (std::size_t c = 0; c < geo.c; ++c) {
    for (std::size_t ki = 0; ki < geo.kh; ++ki) {
      for (std::size_t kj = 0; kj < geo.kw; ++kj) {
        Real* row = col + ((c * geo.kh + ki) * geo.kw + kj) * geo.cols();
        for (std::size_t n = 0; n < geo.n; ++n) {
          const Real* plane = x + (n * geo.c + c) * hw;
          Real* dst = row + n * hw;
          for (std::size_t y = 0; y < geo.h; ++y) {
            const long sy = static_cast<long>(y + ki) - ph;
            if (sy < 0 || sy >= static_cast<long>(geo.h)) {
              std::fill(dst + y * geo.w, dst + (y + 1) * geo.w, Real(0));
              continue;
            }
            for (std::size_t xx = 0; xx < geo.w; ++xx) {
              const long sx = static_cast<long>(xx + kj) - pw;
              dst[y * geo.w + xx] = (sx < 0 || sx >= static_cast<long>(geo.w)) ? Real(0) : plane[sy * geo.w + sx];
            }
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& geo, const Real* col, Real* dx) {
  const std::size_t hw = geo.h * geo.w;
  const long ph = static_cast<long>(geo.kh / 2), pw = static_cast<long>(geo.kw / 2);
  for (std::size_t c = 0; c < geo.c; ++c) {
    for (std::size_t ki = 0; ki < geo.kh; ++ki) {
      for (std::size_t kj = 0; kj < geo.kw; ++kj) {
        const Real* row = col + ((c * geo.kh + ki) * geo.kw + kj) * geo.cols();
        for (std::size_t n = 0; n < geo.n; ++n) {
          Real* plane = dx + (n * geo.c + c) * hw;
          const Real* src = row + n * hw;
          for (std::size_t y = 0; y < geo.h; ++y) {
            const long sy = static_cast<long>(y + ki) - ph;
            if (sy < 0 || sy >= static_cast<long>(geo.h)) continue;
            for (std::size_t xx = 0; xx < geo.w; ++xx) {
              const long sx = static_cast<long>(xx + kj) - pw;
              if (sx >= 0 && sx < static_cast<long>(geo.w)) plane[sy * geo.w + sx] += src[y * geo.w + xx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Real normalized_coordinate(std::size_t index, std::size_t extent) {
  if (extent <= 1) return Real(0);
  return Real(-1) + Real(2) * static_cast<Real>(index) / static_cast<Real>(extent - 1);
}

Real pixel_coordinate(Real normalized, std::size_t extent) {
  if (extent <= 1) return Real(0);
  return (normalized + Real(1)) * static_cast<Real>(extent - 1) / Real(2);
}

namespace ops {

Var matmul(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0)) mismatch("matmul", ta.shape(), tb.shape());
  const std::size_t n = ta.dim(0), k = ta.dim(1), m = tb.dim(1);
  Tensor out({n, m});
  MatrixMap(out.data().data(), n, m).noalias() = ConstMatrixMap(ta.data().data(), n, k) * ConstMatrixMap(tb.data().data(), k, m);
  return g.record("matmul", std::move(out), {a, b}, [n, k, m](BackwardContext& ctx) {
    ConstMatrixMap up(ctx.upstream().data(), n, m);
    if (ctx.needs_grad(0)) {
      MatrixMap(ctx.input_grad(0).data(), n, k).noalias() += up * ConstMatrixMap(ctx.input(1).data().data(), k, m).transpose();
    }
    if (ctx.needs_grad(1)) {
      MatrixMap(ctx.input_grad(1).data(), k, m).noalias() += ConstMatrixMap(ctx.input(0).data().data(), n, k).transpose() * up;
    }
  });
}

Var add_bias(Graph& g, Var x, Var bias) {
  const Tensor& tx = g.value(x);
  const Tensor& tb = g.value(bias);
  const auto layout = channel_layout("add_bias", tx);
  if (tb.size() != layout.channels) mismatch("add_bias", tx.shape(), tb.shape());
  Tensor out = tx;
  out.set_requires_grad(false);
  auto o = out.data();
  auto b = tb.data();
  for (std::size_t n = 0; n < layout.outer; ++n)
    for (std::size_t c = 0; c < layout.channels; ++c)
      for (std::size_t i = 0; i < layout.inner; ++i) o[(n * layout.channels + c) * layout.inner + i] += b[c];
  return g.record("add_bias", std::move(out), {x, bias}, [layout](BackwardContext& ctx) {
    auto up = ctx.upstream();
    if (ctx.needs_grad(0)) accumulate(ctx.input_grad(0), up);
    if (ctx.needs_grad(1)) {
      auto db = ctx.input_grad(1);
      for (std::size_t n = 0; n < layout.outer; ++n)
        for (std::size_t c = 0; c < layout.channels; ++c) {
          const Real* row = up.data() + (n * layout.channels + c) * layout.inner;
          Real s = 0;
          for (std::size_t i = 0; i < layout.inner; ++i) s += row[i];
          db[c] += s;
        }
    }
  });
}

Var conv2d(Graph& g, Var x, Var weight) {
  const Tensor& tx = g.value(x);
  const Tensor& tw = g.value(weight);
  expect_rank("conv2d", tx, 4);
  expect_rank("conv2d", tw, 4);
  if (tw.dim(1) != tx.dim(1) || tw.dim(2) % 2 == 0 || tw.dim(3) % 2 == 0) mismatch("conv2d", tx.shape(), tw.shape());
  const ConvGeometry geo{tx.dim(0), tx.dim(1), tx.dim(2), tx.dim(3), tw.dim(0), tw.dim(2), tw.dim(3)};
  const std::size_t hw = geo.h * geo.w;

  auto col = std::make_shared<std::vector<Real>>(geo.rows() * geo.cols());
  im2col(geo, tx.data().data(), col->data());
  RowMatrix product = ConstMatrixMap(tw.data().data(), geo.o, geo.rows()) * ConstMatrixMap(col->data(), geo.rows(), geo.cols());

  Tensor out({geo.n, geo.o, geo.h, geo.w});
  auto o = out.data();
  for (std::size_t n = 0; n < geo.n; ++n)
    for (std::size_t k = 0; k < geo.o; ++k)
      std::copy_n(product.data() + k * geo.cols() + n * hw, hw, o.data() + (n * geo.o + k) * hw);

  return g.record("conv2d", std::move(out), {x, weight}, [geo, col](BackwardContext& ctx) {
    const std::size_t hw = geo.h * geo.w;
    auto up = ctx.upstream();
    RowMatrix dy(geo.o, geo.cols());
    for (std::size_t n = 0; n < geo.n; ++n)
      for (std::size_t k = 0; k < geo.o; ++k)
        std::copy_n(up.data() + (n * geo.o + k) * hw, hw, dy.data() + k * geo.cols() + n * hw);
    if (ctx.needs_grad(1)) {
      MatrixMap(ctx.input_grad(1).data(), geo.o, geo.rows()).noalias() +=
          dy * ConstMatrixMap(col->data(), geo.rows(), geo.cols()).transpose();
    }
    if (ctx.needs_grad(0)) {
      RowMatrix dcol = ConstMatrixMap(ctx.input(1).data().data(), geo.o, geo.rows()).transpose() * dy;
      col2im(geo, dcol.data(), ctx.input_grad(0).data());
    }
  });
}

Var relu(Graph& g, Var x) {
  Tensor out = g.value(x);
  out.set_requires_grad(false);
  for (Real& v : out.data()) v = std::max(v, Real(0));
  return g.record("relu", std::move(out), {x}, [](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto in = ctx.input(0).data();
    auto dx = ctx.input_grad(0);
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (in[i] > 0) dx[i] += up[i];
  });
}

Var sigmoid(Graph& g, Var x) {
  Tensor out = g.value(x);
  out.set_requires_grad(false);
  for (Real& v : out.data()) v = Real(1) / (Real(1) + std::exp(-v));
  return g.record("sigmoid", std::move(out), {x}, [](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto y = ctx.output().data();
    auto dx = ctx.input_grad(0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += up[i] * y[i] * (Real(1) - y[i]);
  });
}

Var max_pool2d(Graph& g, Var x) {
  const Tensor& tx = g.value(x);
  expect_rank("max_pool2d", tx, 4);
  const std::size_t n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2d: input " + to_string(tx.shape()) + " smaller than the 2x2 window");
  Tensor out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  auto in = tx.data();
  auto o = out.data();
  std::size_t idx = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx, ++idx) {
        std::size_t best = base + 2 * y * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t at = base + (2 * y + dy) * w + 2 * xx + dx;
            if (in[at] > in[best]) best = at;
          }
        (*argmax)[idx] = best;
        o[idx] = in[best];
      }
  }
  return g.record("max_pool2d", std::move(out), {x}, [argmax](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto dx = ctx.input_grad(0);
    for (std::size_t i = 0; i < up.size(); ++i) dx[(*argmax)[i]] += up[i];
  });
}

Var batch_norm_train(Graph& g, Var x, Var gamma, Var beta, const BatchNormState& state) {
  const Tensor& tx = g.value(x);
  const auto layout = channel_layout("batch_norm", tx);
  const Tensor& tg = g.value(gamma);
  const Tensor& tb = g.value(beta);
  if (tg.size() != layout.channels || tb.size() != layout.channels) mismatch("batch_norm", tx.shape(), tg.shape());
  if (!state.running_mean || !state.running_var || state.running_mean->size() != layout.channels ||
      state.running_var->size() != layout.channels) {
    throw ShapeError("batch_norm: running statistics missing or not sized " + std::to_string(layout.channels));
  }
  const std::size_t count = layout.outer * layout.inner;
  auto in = tx.data();
  auto xhat = std::make_shared<std::vector<Real>>(tx.size());
  auto inv_std = std::make_shared<std::vector<Real>>(layout.channels);
  Tensor out(tx.shape());
  auto o = out.data();
  auto rm = state.running_mean->data();
  auto rv = state.running_var->data();
  for (std::size_t c = 0; c < layout.channels; ++c) {
    double mean = 0, sq = 0;
    for (std::size_t n = 0; n < layout.outer; ++n) {
      const Real* row = in.data() + (n * layout.channels + c) * layout.inner;
      for (std::size_t i = 0; i < layout.inner; ++i) mean += row[i];
    }
    mean /= static_cast<double>(count);
    for (std::size_t n = 0; n < layout.outer; ++n) {
      const Real* row = in.data() + (n * layout.channels + c) * layout.inner;
      for (std::size_t i = 0; i < layout.inner; ++i) sq += (row[i] - mean) * (row[i] - mean);
    }
    const double var = sq / static_cast<double>(count);
    const Real istd = static_cast<Real>(1.0 / std::sqrt(var + state.eps));
    (*inv_std)[c] = istd;
    for (std::size_t n = 0; n < layout.outer; ++n) {
      const std::size_t off = (n * layout.channels + c) * layout.inner;
      for (std::size_t i = 0; i < layout.inner; ++i) {
        const Real h = (in[off + i] - static_cast<Real>(mean)) * istd;
        (*xhat)[off + i] = h;
        o[off + i] = tg[c] * h + tb[c];
      }
    }
    const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
    rm[c] = static_cast<Real>((1 - state.momentum) * rm[c] + state.momentum * mean);
    rv[c] = static_cast<Real>((1 - state.momentum) * rv[c] + state.momentum * unbiased);
  }
  return g.record("batch_norm_train", std::move(out), {x, gamma, beta}, [layout, count, xhat, inv_std](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto gm = ctx.input(1).data();
    for (std::size_t c = 0; c < layout.channels; ++c) {
      Real sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t n = 0; n < layout.outer; ++n) {
        const std::size_t off = (n * layout.channels + c) * layout.inner;
        for (std::size_t i = 0; i < layout.inner; ++i) {
          sum_dy += up[off + i];
          sum_dy_xhat += up[off + i] * (*xhat)[off + i];
        }
      }
      if (ctx.needs_grad(1)) ctx.input_grad(1)[c] += sum_dy_xhat;
      if (ctx.needs_grad(2)) ctx.input_grad(2)[c] += sum_dy;
      if (ctx.needs_grad(0)) {
        auto dx = ctx.input_grad(0);
        const Real k = gm[c] * (*inv_std)[c] / static_cast<Real>(count);
        for (std::size_t n = 0; n < layout.outer; ++n) {
          const std::size_t off = (n * layout.channels + c) * layout.inner;
          for (std::size_t i = 0; i < layout.inner; ++i) {
            dx[off + i] += k * (static_cast<Real>(count) * up[off + i] - sum_dy - (*xhat)[off + i] * sum_dy_xhat);
          }
        }
      }
    }
  });
}

Var batch_norm_inference(Graph& g, Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& var, Real eps) {
  const Tensor& tx = g.value(x);
  const auto layout = channel_layout("batch_norm", tx);
  const Tensor& tg = g.value(gamma);
  const Tensor& tb = g.value(beta);
  if (tg.size() != layout.channels || tb.size() != layout.channels || mean.size() != layout.channels ||
      var.size() != layout.channels) {
    mismatch("batch_norm", tx.shape(), tg.shape());
  }
  auto inv_std = std::make_shared<std::vector<Real>>(layout.channels);
  for (std::size_t c = 0; c < layout.channels; ++c) (*inv_std)[c] = Real(1) / std::sqrt(var[c] + eps);
  Tensor out(tx.shape());
  auto in = tx.data();
  auto o = out.data();
  for (std::size_t n = 0; n < layout.outer; ++n)
    for (std::size_t c = 0; c < layout.channels; ++c) {
      const std::size_t off = (n * layout.channels + c) * layout.inner;
      for (std::size_t i = 0; i < layout.inner; ++i)
        o[off + i] = tg[c] * (in[off + i] - mean[c]) * (*inv_std)[c] + tb[c];
    }
  std::vector<Real> frozen_mean(mean.data().begin(), mean.data().end());
  return g.record("batch_norm_inference", std::move(out), {x, gamma, beta},
                  [layout, inv_std, frozen_mean = std::move(frozen_mean)](BackwardContext& ctx) {
                    auto up = ctx.upstream();
                    auto in = ctx.input(0).data();
                    auto gm = ctx.input(1).data();
                    for (std::size_t c = 0; c < layout.channels; ++c) {
                      Real sum_dy = 0, sum_dy_xhat = 0;
                      for (std::size_t n = 0; n < layout.outer; ++n) {
                        const std::size_t off = (n * layout.channels + c) * layout.inner;
                        for (std::size_t i = 0; i < layout.inner; ++i) {
                          sum_dy += up[off + i];
                          sum_dy_xhat += up[off + i] * (in[off + i] - frozen_mean[c]) * (*inv_std)[c];
                        }
                      }
                      if (ctx.needs_grad(1)) ctx.input_grad(1)[c] += sum_dy_xhat;
                      if (ctx.needs_grad(2)) ctx.input_grad(2)[c] += sum_dy;
                      if (ctx.needs_grad(0)) {
                        auto dx = ctx.input_grad(0);
                        const Real k = gm[c] * (*inv_std)[c];
                        for (std::size_t n = 0; n < layout.outer; ++n) {
                          const std::size_t off = (n * layout.channels + c) * layout.inner;
                          for (std::size_t i = 0; i < layout.inner; ++i) dx[off + i] += k * up[off + i];
                        }
                      }
                    }
                  });
}

Var softmax(Graph& g, Var logits) {
  const Tensor& tx = g.value(logits);
  expect_rank("softmax", tx, 2);
  const std::size_t n = tx.dim(0), k = tx.dim(1);
  Tensor out(tx.shape());
  auto in = tx.data();
  auto o = out.data();
  for (std::size_t r = 0; r < n; ++r) {
    const Real* row = in.data() + r * k;
    const Real peak = *std::max_element(row, row + k);
    Real total = 0;
    for (std::size_t j = 0; j < k; ++j) total += (o[r * k + j] = std::exp(row[j] - peak));
    for (std::size_t j = 0; j < k; ++j) o[r * k + j] /= total;
  }
  return g.record("softmax", std::move(out), {logits}, [n, k](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto y = ctx.output().data();
    auto dx = ctx.input_grad(0);
    for (std::size_t r = 0; r < n; ++r) {
      Real dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += up[r * k + j] * y[r * k + j];
      for (std::size_t j = 0; j < k; ++j) dx[r * k + j] += y[r * k + j] * (up[r * k + j] - dot);
    }
  });
}

Var softmax_cross_entropy(Graph& g, Var logits, std::span<const int> labels) {
  const Tensor& tx = g.value(logits);
  expect_rank("softmax_cross_entropy", tx, 2);
  const std::size_t n = tx.dim(0), k = tx.dim(1);
  if (labels.size() != n) mismatch("softmax_cross_entropy", tx.shape(), Shape{labels.size()});
  auto probs = std::make_shared<std::vector<Real>>(n * k);
  auto in = tx.data();
  double loss = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(k) + ")");
    }
    const Real* row = in.data() + r * k;
    const Real peak = *std::max_element(row, row + k);
    Real total = 0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(row[j] - peak);
    const Real log_total = std::log(total);
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(row[j] - peak - log_total);
    loss -= row[label] - peak - log_total;
  }
  std::vector<int> kept(labels.begin(), labels.end());
  return g.record("softmax_cross_entropy", Tensor::scalar(static_cast<Real>(loss / static_cast<double>(n))), {logits},
                  [n, k, probs, kept = std::move(kept)](BackwardContext& ctx) {
                    const Real scale = ctx.upstream()[0] / static_cast<Real>(n);
                    auto dx = ctx.input_grad(0);
                    for (std::size_t r = 0; r < n; ++r)
                      for (std::size_t j = 0; j < k; ++j) {
                        const Real onehot = static_cast<int>(j) == kept[r] ? Real(1) : Real(0);
                        dx[r * k + j] += scale * ((*probs)[r * k + j] - onehot);
                      }
                  });
}

Var weighted_nll(Graph& g, Var probs, const Tensor& target, Real floor) {
  const Tensor& tp = g.value(probs);
  if (tp.shape() != target.shape()) mismatch("weighted_nll", tp.shape(), target.shape());
  auto p = tp.data();
  auto t = target.data();
  double loss = 0;
  for (std::size_t i = 0; i < p.size(); ++i) loss -= t[i] * std::log(std::max(p[i], floor));
  std::vector<Real> weights(t.begin(), t.end());
  return g.record("weighted_nll", Tensor::scalar(static_cast<Real>(loss)), {probs},
                  [floor, weights = std::move(weights)](BackwardContext& ctx) {
                    const Real up = ctx.upstream()[0];
                    auto p = ctx.input(0).data();
                    auto dx = ctx.input_grad(0);
                    for (std::size_t i = 0; i < dx.size(); ++i)
                      if (p[i] > floor) dx[i] -= up * weights[i] / p[i];
                  });
}

Var add(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.shape() == tb.shape()) {
    Tensor out(ta.shape());
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = ta[i] + tb[i];
    return g.record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
      if (ctx.needs_grad(0)) accumulate(ctx.input_grad(0), ctx.upstream());
      if (ctx.needs_grad(1)) accumulate(ctx.input_grad(1), ctx.upstream());
    });
  }
  if (!channel_broadcast(ta.shape(), tb.shape())) mismatch("add", ta.shape(), tb.shape());
  const std::size_t n = ta.dim(0), c = ta.dim(1), hw = ta.dim(2) * ta.dim(3);
  Tensor out(ta.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) out[(s * c + ch) * hw + i] = ta[(s * c + ch) * hw + i] + tb[s * hw + i];
  return g.record("add", std::move(out), {a, b}, [n, c, hw](BackwardContext& ctx) {
    auto up = ctx.upstream();
    if (ctx.needs_grad(0)) accumulate(ctx.input_grad(0), up);
    if (ctx.needs_grad(1)) {
      auto db = ctx.input_grad(1);
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < hw; ++i) db[s * hw + i] += up[(s * c + ch) * hw + i];
    }
  });
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  const bool same = ta.shape() == tb.shape();
  if (!same && !channel_broadcast(ta.shape(), tb.shape())) mismatch("mul", ta.shape(), tb.shape());
  const std::size_t n = ta.rank() ? ta.dim(0) : 1;
  const std::size_t per_sample = ta.size() / std::max<std::size_t>(n, 1);
  const std::size_t b_per_sample = tb.size() / std::max<std::size_t>(n, 1);
  // maps an element of a onto its partner in b
  auto partner = [per_sample, b_per_sample](std::size_t i) {
    const std::size_t s = i / per_sample, r = i % per_sample;
    return s * b_per_sample + r % b_per_sample;
  };
  Tensor out(ta.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ta[i] * tb[same ? i : partner(i)];
  return g.record("mul", std::move(out), {a, b}, [same, partner](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto va = ctx.input(0).data();
    auto vb = ctx.input(1).data();
    if (ctx.needs_grad(0)) {
      auto da = ctx.input_grad(0);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += up[i] * vb[same ? i : partner(i)];
    }
    if (ctx.needs_grad(1)) {
      auto db = ctx.input_grad(1);
      for (std::size_t i = 0; i < up.size(); ++i) db[same ? i : partner(i)] += up[i] * va[i];
    }
  });
}

Var scale(Graph& g, Var x, Real factor) {
  Tensor out = g.value(x);
  out.set_requires_grad(false);
  for (Real& v : out.data()) v *= factor;
  return g.record("scale", std::move(out), {x}, [factor](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto dx = ctx.input_grad(0);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += factor * up[i];
  });
}

Var sum(Graph& g, Var x) {
  double total = 0;
  for (Real v : g.value(x).data()) total += v;
  return g.record("sum", Tensor::scalar(static_cast<Real>(total)), {x}, [](BackwardContext& ctx) {
    const Real up = ctx.upstream()[0];
    for (Real& d : ctx.input_grad(0)) d += up;
  });
}

Var reshape(Graph& g, Var x, Shape shape) {
  const Tensor& tx = g.value(x);
  if (shape_size(shape) != tx.size()) mismatch("reshape", tx.shape(), shape);
  Tensor out(std::move(shape), tx.storage());
  return g.record("reshape", std::move(out), {x}, [](BackwardContext& ctx) { accumulate(ctx.input_grad(0), ctx.upstream()); });
}

Var upsample2d(Graph& g, Var x, std::size_t factor_y, std::size_t factor_x) {
  const Tensor& tx = g.value(x);
  expect_rank("upsample2d", tx, 4);
  if (factor_y == 0 || factor_x == 0) throw ShapeError("upsample2d: factors must be positive");
  const std::size_t planes = tx.dim(0) * tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  const std::size_t oh = h * factor_y, ow = w * factor_x;
  Tensor out({tx.dim(0), tx.dim(1), oh, ow});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = tx[(p * h + y / factor_y) * w + xx / factor_x];
  return g.record("upsample2d", std::move(out), {x}, [planes, h, w, factor_y, factor_x](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto dx = ctx.input_grad(0);
    const std::size_t oh = h * factor_y, ow = w * factor_x;
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) dx[(p * h + y / factor_y) * w + xx / factor_x] += up[(p * oh + y) * ow + xx];
  });
}

Var affine_grid(Graph& g, Var theta, std::size_t height, std::size_t width) {
  const Tensor& tt = g.value(theta);
  if (tt.rank() != 2 || tt.dim(1) != 6) mismatch("affine_grid", tt.shape(), Shape{tt.rank() ? tt.dim(0) : 0, 6});
  if (height == 0 || width == 0) throw ShapeError("affine_grid: empty target grid");
  const std::size_t n = tt.dim(0);
  Tensor out({n, height, width, 2});
  for (std::size_t s = 0; s < n; ++s) {
    const Real* t = tt.data().data() + s * 6;
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const Real xs = normalized_coordinate(j, width), ys = normalized_coordinate(i, height);
        Real* dst = out.data().data() + ((s * height + i) * width + j) * 2;
        dst[0] = t[0] * xs + t[1] * ys + t[2];
        dst[1] = t[3] * xs + t[4] * ys + t[5];
      }
  }
  return g.record("affine_grid", std::move(out), {theta}, [n, height, width](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto dt = ctx.input_grad(0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < height; ++i)
        for (std::size_t j = 0; j < width; ++j) {
          const Real xs = normalized_coordinate(j, width), ys = normalized_coordinate(i, height);
          const Real* gxy = up.data() + ((s * height + i) * width + j) * 2;
          Real* d = dt.data() + s * 6;
          d[0] += gxy[0] * xs;
          d[1] += gxy[0] * ys;
          d[2] += gxy[0];
          d[3] += gxy[1] * xs;
          d[4] += gxy[1] * ys;
          d[5] += gxy[1];
        }
  });
}

namespace {

struct BilinearTap {
  long x0, y0;
  Real fx, fy;
};

BilinearTap bilinear_tap(Real gx, Real gy, std::size_t h, std::size_t w) {
  const Real x = pixel_coordinate(gx, w), y = pixel_coordinate(gy, h);
  const Real fx0 = std::floor(x), fy0 = std::floor(y);
  return {static_cast<long>(fx0), static_cast<long>(fy0), x - fx0, y - fy0};
}

}  // namespace

Var grid_sample(Graph& g, Var image, Var grid) {
  const Tensor& ti = g.value(image);
  const Tensor& tg = g.value(grid);
  expect_rank("grid_sample", ti, 4);
  if (tg.rank() != 4 || tg.dim(3) != 2 || tg.dim(0) != ti.dim(0)) mismatch("grid_sample", ti.shape(), tg.shape());
  const std::size_t n = ti.dim(0), c = ti.dim(1), h = ti.dim(2), w = ti.dim(3);
  const std::size_t oh = tg.dim(1), ow = tg.dim(2);
  Tensor out({n, c, oh, ow});
  auto img = ti.data();
  auto pixel = [&img, c, h, w](std::size_t s, std::size_t ch, long y, long x) -> Real {
    if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return Real(0);
    return img[((s * c + ch) * h + y) * w + x];
  };
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t p = 0; p < oh * ow; ++p) {
      const Real* gxy = tg.data().data() + (s * oh * ow + p) * 2;
      const auto tap = bilinear_tap(gxy[0], gxy[1], h, w);
      const Real wx[2] = {Real(1) - tap.fx, tap.fx}, wy[2] = {Real(1) - tap.fy, tap.fy};
      for (std::size_t ch = 0; ch < c; ++ch) {
        Real v = 0;
        for (int b = 0; b < 2; ++b)
          for (int a = 0; a < 2; ++a) {
            if (wx[a] == 0 || wy[b] == 0) continue;
            v += pixel(s, ch, tap.y0 + b, tap.x0 + a) * wx[a] * wy[b];
          }
        out[(s * c + ch) * oh * ow + p] = v;
      }
    }
  return g.record("grid_sample", std::move(out), {image, grid}, [n, c, h, w, oh, ow](BackwardContext& ctx) {
    auto up = ctx.upstream();
    auto img = ctx.input(0).data();
    auto grd = ctx.input(1).data();
    const bool want_image = ctx.needs_grad(0), want_grid = ctx.needs_grad(1);
    std::span<Real> dimg = want_image ? ctx.input_grad(0) : std::span<Real>{};
    std::span<Real> dgrid = want_grid ? ctx.input_grad(1) : std::span<Real>{};
    auto inside = [h, w](long y, long x) { return x >= 0 && y >= 0 && x < static_cast<long>(w) && y < static_cast<long>(h); };
    auto pixel = [&](std::size_t s, std::size_t ch, long y, long x) -> Real {
      return inside(y, x) ? img[((s * c + ch) * h + y) * w + x] : Real(0);
    };
    const Real sx = w > 1 ? static_cast<Real>(w - 1) / 2 : Real(0);
    const Real sy = h > 1 ? static_cast<Real>(h - 1) / 2 : Real(0);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t p = 0; p < oh * ow; ++p) {
        const Real* gxy = grd.data() + (s * oh * ow + p) * 2;
        const auto tap = bilinear_tap(gxy[0], gxy[1], h, w);
        const Real wx[2] = {Real(1) - tap.fx, tap.fx}, wy[2] = {Real(1) - tap.fy, tap.fy};
        Real dx_total = 0, dy_total = 0;
        for (std::size_t ch = 0; ch < c; ++ch) {
          const Real u = up[(s * c + ch) * oh * ow + p];
          if (u == 0) continue;
          if (want_image) {
            for (int b = 0; b < 2; ++b)
              for (int a = 0; a < 2; ++a) {
                const long y = tap.y0 + b, x = tap.x0 + a;
                if (wx[a] != 0 && wy[b] != 0 && inside(y, x)) dimg[((s * c + ch) * h + y) * w + x] += u * wx[a] * wy[b];
              }
          }
          if (want_grid) {
            // Sub-gradient of max(0, 1 - |x - m|): +1 where m >= x, -1 where m < x, 0 once
            // |x - m| >= 1. At an integer x only m == x is in range and contributes +1.
            Real dodx = 0, dody = 0;
            for (int b = 0; b < 2; ++b) {
              if (wy[b] == 0) continue;
              const long y = tap.y0 + b;
              dodx += wy[b] * (tap.fx > 0 ? pixel(s, ch, y, tap.x0 + 1) - pixel(s, ch, y, tap.x0) : pixel(s, ch, y, tap.x0));
            }
            for (int a = 0; a < 2; ++a) {
              if (wx[a] == 0) continue;
              const long x = tap.x0 + a;
              dody += wx[a] * (tap.fy > 0 ? pixel(s, ch, tap.y0 + 1, x) - pixel(s, ch, tap.y0, x) : pixel(s, ch, tap.y0, x));
            }
            dx_total += u * dodx;
            dy_total += u * dody;
          }
        }
        if (want_grid) {
          dgrid[(s * oh * ow + p) * 2] += dx_total * sx;
          dgrid[(s * oh * ow + p) * 2 + 1] += dy_total * sy;
        }
      }
  });
}

}  // namespace ops

SCNN_NAMESPACE_END
