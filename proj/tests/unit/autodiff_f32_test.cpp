#include <cmath>
#include <functional>

#include "scnn/gradcheck.hpp"
#include "scnn/ops.hpp"
#include "support.hpp"

using namespace scnn;
using testing_support::random_tensor;

namespace {

static_assert(std::is_same_v<Real, float>);

using Forward = std::function<Var(Graph&, Var)>;

// Projects the output onto fixed random weights and checks d/dx in float.
float check(const Tensor& x0, const Forward& forward) {
  Tensor projection;
  auto loss = [&](Graph& g, Var x) {
    Var out = forward(g, x);
    if (projection.empty()) projection = random_tensor(g.value(out).shape(), 99);
    return ops::sum(g, ops::mul(g, out, g.input(projection)));
  };
  Graph g;
  Var x = g.input(x0, true);
  g.backward(loss(g, x));
  const std::vector<Real> analytic(g.grad(x).begin(), g.grad(x).end());
  Tensor probe = x0;
  return finite_difference_check(
      [&](const Tensor& t) {
        Graph fg;
        return fg.value(loss(fg, fg.input(t))).item();
      },
      probe, analytic, 1e-2f);
}

// Values in [-1,1] kept 0.1 away from zero so relu has no kink within eps.
Tensor away_from_zero(Shape shape, std::uint64_t seed) {
  Tensor t = random_tensor(std::move(shape), seed);
  for (Real& v : t.data()) v = std::copysign(0.1f + 0.9f * std::abs(v), v);
  return t;
}

}  // namespace

TEST(Float32Gradients, KernelsWithinOnePercent) {
  const Tensor w = random_tensor({3, 2, 3, 3}, 1), m = random_tensor({5, 4}, 2);
  const Tensor gamma = random_tensor({2}, 3, 0.5f, 1.5f), beta = random_tensor({2}, 4);
  const Tensor grid = random_tensor({1, 3, 3, 2}, 5, -0.9f, 0.9f);
  struct Case {
    const char* name;
    Tensor input;
    Forward forward;
  };
  const std::vector<Case> cases = {
      {"matmul", random_tensor({3, 5}, 10), [&](Graph& g, Var x) { return ops::matmul(g, x, g.input(m)); }},
      {"conv2d", random_tensor({2, 2, 4, 4}, 11), [&](Graph& g, Var x) { return ops::conv2d(g, x, g.input(w)); }},
      {"relu", away_from_zero({2, 3, 4}, 12), [](Graph& g, Var x) { return ops::relu(g, x); }},
      {"sigmoid", random_tensor({2, 3, 4}, 13), [](Graph& g, Var x) { return ops::sigmoid(g, x); }},
      {"softmax", random_tensor({3, 4}, 14), [](Graph& g, Var x) { return ops::softmax(g, x); }},
      {"batch_norm_train", random_tensor({3, 2, 2, 2}, 15),
       [&](Graph& g, Var x) {
         static Tensor mean({2}), var({2}, 1);
         return ops::batch_norm_train(g, x, g.input(gamma), g.input(beta), {&mean, &var});
       }},
      {"upsample2d", random_tensor({1, 2, 2, 2}, 16), [](Graph& g, Var x) { return ops::upsample2d(g, x, 2, 3); }},
      {"grid_sample/image", random_tensor({1, 2, 4, 4}, 17),
       [&](Graph& g, Var x) { return ops::grid_sample(g, x, g.input(grid)); }},
      {"affine_grid", random_tensor({1, 6}, 18), [](Graph& g, Var x) { return ops::affine_grid(g, x, 3, 4); }},
  };
  for (const auto& c : cases) EXPECT_LT(check(c.input, c.forward), 1e-2f) << c.name;
}

TEST(Float32Gradients, MaxPoolWithSeparatedValues) {
  Tensor x({1, 1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) x[i] = static_cast<Real>((i * 7) % 16) / 8.0f - 1.0f;
  EXPECT_LT(check(x, [](Graph& g, Var v) { return ops::max_pool2d(g, v); }), 1e-2f);
}
