#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "scnn/ops.hpp"
#include "scnn/synthesizer.hpp"
#include "support.hpp"

using namespace scnn;
using namespace scnn::testing_support;

namespace {

// Trained once per process: desk net on limited-MNIST-1000, then frozen.
const EmbeddedNet& trained_net() {
  static const EmbeddedNet net = [] {
    EmbeddedNet n(NetConfig::desk(), 1);
    TrainOptions o;
    o.epochs = 20;
    train(n, limited_mnist(1000), o);
    n.freeze();
    return n;
  }();
  return net;
}

LabeledDataset first_n(const LabeledDataset& ds, std::size_t n) {
  LabeledDataset out;
  for (std::size_t i = 0; i < n; ++i) out.add(ds.image(i), ds.label(i));
  return out;
}

// Independent ranking: order by probability descending, then class id.
std::vector<int> ranking(const std::vector<Real>& p) {
  std::vector<int> idx(p.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return p[a] > p[b]; });
  return idx;
}

double margin_of(std::span<const Real> p, int label) {
  double best = -1;
  for (std::size_t k = 0; k < p.size(); ++k)
    if (static_cast<int>(k) != label) best = std::max(best, static_cast<double>(p[k]));
  return std::abs(p[label] - best);
}

}  // namespace

TEST(ComputeTargets, SpecExamples) {
  const std::vector<Real> correct{0.7, 0.2, 0.1};
  TargetSpec t = compute_targets(correct, 0, Real(0.3));
  EXPECT_EQ(t.predicted, 0);
  EXPECT_EQ(t.runner_up, 1);
  EXPECT_EQ(t.target.storage(), (std::vector<Real>{1, Real(0.3), 0}));

  const std::vector<Real> wrong{0.2, 0.7, 0.1};
  t = compute_targets(wrong, 0, Real(0.3));
  EXPECT_EQ(t.predicted, 1);
  EXPECT_EQ(t.target.storage(), (std::vector<Real>{1, Real(0.3), 0}));

  const std::vector<Real> tie{0.5, 0.5};
  t = compute_targets(tie, 0, Real(0.3));
  EXPECT_EQ(t.predicted, 0);
  EXPECT_EQ(t.runner_up, 1);
}

// Every label and every ordering (with ties) of small probability vectors
// against the ranking oracle and the two branch rules.
TEST(ComputeTargets, ExhaustiveAgainstOracle) {
  const Real alpha = Real(0.4);
  std::size_t cases = 0, branch_correct = 0, branch_wrong = 0, with_ties = 0;
  for (std::size_t k = 2; k <= 4; ++k) {
    std::vector<int> levels(k, 0);
    // Each class takes one of k levels; equal levels are ties.
    const std::size_t combos = static_cast<std::size_t>(std::pow(k, k));
    for (std::size_t code = 0; code < combos; ++code) {
      std::size_t c = code;
      std::vector<Real> p(k);
      for (std::size_t i = 0; i < k; ++i) {
        p[i] = static_cast<Real>(1 + c % k);
        c /= k;
      }
      const Real total = std::accumulate(p.begin(), p.end(), Real(0));
      for (Real& v : p) v /= total;
      const auto order = ranking(p);
      const bool tied = std::set<Real>(p.begin(), p.end()).size() < k;
      for (int y = 0; y < static_cast<int>(k); ++y) {
        const TargetSpec t = compute_targets(p, y, alpha);
        ASSERT_EQ(t.predicted, order[0]);
        ASSERT_EQ(t.runner_up, order[1]);
        ASSERT_NE(t.predicted, t.runner_up);
        std::vector<Real> expected(k, 0);
        expected[static_cast<std::size_t>(y)] += 1;
        const int other = order[0] == y ? order[1] : order[0];
        expected[static_cast<std::size_t>(other)] += alpha;
        ASSERT_EQ(t.target.storage(), expected);
        ASSERT_NEAR(std::accumulate(t.target.data().begin(), t.target.data().end(), 0.0), 1 + alpha, 1e-6);
        ++cases;
        (order[0] == y ? branch_correct : branch_wrong)++;
        with_ties += tied;
      }
    }
  }
  EXPECT_GT(branch_correct, 0u);
  EXPECT_GT(branch_wrong, 0u);
  EXPECT_GT(with_ties, 0u);
  RecordProperty("cases", static_cast<int>(cases));
}

TEST(ComputeTargets, ScaleInvariantOrdering) {
  const std::vector<Real> p{0.1, 0.4, 0.3, 0.2};
  std::vector<Real> scaled(p);
  for (Real& v : scaled) v *= 7;
  const auto a = compute_targets(p, 2, 1), b = compute_targets(scaled, 2, 1);
  EXPECT_EQ(a.predicted, b.predicted);
  EXPECT_EQ(a.runner_up, b.runner_up);
  EXPECT_EQ(a.target.storage(), b.target.storage());
}

TEST(ComputeTargets, NormalizeAndErrors) {
  const std::vector<Real> p{0.6, 0.3, 0.1};
  const auto t = compute_targets(p, 0, Real(0.5), true);
  EXPECT_NEAR(t.target[0], 1 / 1.5, 1e-6);
  EXPECT_NEAR(t.target[1], 0.5 / 1.5, 1e-6);
  const std::vector<Real> one{1};
  EXPECT_THROW(compute_targets(one, 0, 1), std::invalid_argument);
  EXPECT_THROW(compute_targets(p, 3, 1), std::out_of_range);
}

TEST(AdsLoss, Values) {
  const std::vector<Real> onehot{0, 1, 0};
  EXPECT_EQ(ads_loss(onehot, compute_targets(onehot, 1, Real(1e-9))), Real(1e-9) * -std::log(Real(1e-12)));
  const std::vector<Real> half{0.5, 0.5};
  const auto t = compute_targets(half, 0, Real(0.3));
  EXPECT_NEAR(ads_loss(half, t), 1.3 * std::log(2.0), 1e-6);
  EXPECT_NEAR(ads_loss(half, t), 0.9010, 1e-4);
  Graph g;
  Var probs = g.input(Tensor({1, 2}, half));
  EXPECT_NEAR(g.value(ads_loss(g, probs, t)).item(), ads_loss(half, t), 1e-6);
}

TEST(AdsLoss, ExactZeroWithoutRunnerUpWeight) {
  TargetSpec t;
  t.target = Tensor({3}, {0, 1, 0});
  const std::vector<Real> p{0, 1, 0};
  EXPECT_EQ(ads_loss(p, t), 0);
}

TEST(AdsLoss, DecreasesAsMassMovesToWeightedClasses) {
  const std::vector<Real> start{0.1, 0.1, 0.8};
  const auto t = compute_targets(std::vector<Real>{0.5, 0.3, 0.2}, 0, Real(0.5));
  const std::vector<Real> moved{0.4, 0.2, 0.4};
  EXPECT_LT(ads_loss(moved, t), ads_loss(start, t));
}

// Gradient descent on free logits with targets recomputed each step settles at
// p(label) = 1/(1+alpha), i.e. margin (1-alpha)/(1+alpha).
TEST(AdsLoss, StationaryMarginMatchesClosedForm) {
  for (double alpha : {0.25, 0.5, 1.0}) {
    std::vector<double> z{3, 1, 0.5, -1};
    const int label = 0;
    for (int step = 0; step < 20000; ++step) {
      std::vector<double> p(4);
      double zmax = *std::max_element(z.begin(), z.end()), s = 0;
      for (int k = 0; k < 4; ++k) s += p[k] = std::exp(z[k] - zmax);
      for (double& v : p) v /= s;
      const auto t = compute_targets(std::vector<Real>(p.begin(), p.end()), label, static_cast<Real>(alpha));
      const double mass = 1 + alpha;
      for (int k = 0; k < 4; ++k) z[k] -= 0.05 * (mass * p[k] - t.target[static_cast<std::size_t>(k)]);
    }
    std::vector<Real> p(4);
    double zmax = *std::max_element(z.begin(), z.end()), s = 0;
    for (int k = 0; k < 4; ++k) s += p[k] = static_cast<Real>(std::exp(z[k] - zmax));
    for (Real& v : p) v /= static_cast<Real>(s);
    EXPECT_NEAR(margin_of(p, label), (1 - alpha) / (1 + alpha), 2e-3) << "alpha " << alpha;
  }
}

TEST(AdsForward, IdentityParamsEqualNetForward) {
  const EmbeddedNet& net = trained_net();
  const Tensor img = mnist_test().image(0);
  const Tensor p = ads_forward(img, AffineParams::identity(), net);
  const Tensor direct = net.predict(img.reshaped({1, 1, 28, 28}));
  for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(p[k], direct[k], 1e-5);
  EXPECT_NEAR(std::accumulate(p.data().begin(), p.data().end(), 0.0), 1, 1e-5);
}

TEST(AdsForward, UnfrozenNetRejected) {
  EmbeddedNet net(tiny_net(), 2);
  EXPECT_THROW(ads_forward(Tensor({1, 12, 12}), AffineParams::identity(), net), FrozenNetError);
  SynthesisConfig cfg;
  EXPECT_THROW(synthesize_sample(Tensor({1, 12, 12}), 0, net, cfg, ManipulatorKind::affine, 0), FrozenNetError);
  EXPECT_THROW(synthesize_batch(LabeledDataset{}, net, cfg, {}), FrozenNetError);
}

TEST(SynthesisConfig, Validation) {
  SynthesisConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.erase_count = 17;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.grid.width = 4;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_stop_rule(to_string(StopRule::stop_on_margin)), StopRule::stop_on_margin);
  EXPECT_THROW(parse_stop_rule("never"), std::invalid_argument);
}

TEST(SynthesizeSample, ZeroStepsEvaluatesInitialState) {
  const EmbeddedNet& net = trained_net();
  SynthesisConfig cfg;
  cfg.max_steps = 0;
  const auto r = synthesize_sample(mnist_test().image(1), mnist_test().label(1), net, cfg, ManipulatorKind::affine, 3);
  EXPECT_EQ(r.steps, 0u);
  ASSERT_EQ(r.loss_trajectory.size(), 1u);
  EXPECT_EQ(r.label, mnist_test().label(1));
  double diff = 0;
  for (std::size_t i = 0; i < r.adversarial.size(); ++i)
    diff = std::max(diff, std::abs(static_cast<double>(r.adversarial[i] - mnist_test().image(1)[i])));
  EXPECT_LT(diff, 1e-5);
}

TEST(SynthesizeSample, ShapeLabelAndTrajectory) {
  const EmbeddedNet& net = trained_net();
  SynthesisConfig cfg;
  cfg.stop_rule = StopRule::fixed_steps;
  cfg.max_steps = 7;
  for (auto kind : {ManipulatorKind::affine, ManipulatorKind::grid, ManipulatorKind::erase}) {
    const auto r = synthesize_sample(mnist_test().image(2), mnist_test().label(2), net, cfg, kind, 4);
    EXPECT_EQ(r.adversarial.shape(), mnist_test().image(2).shape());
    EXPECT_EQ(r.label, mnist_test().label(2));
    EXPECT_EQ(r.steps, 7u);
    EXPECT_EQ(r.loss_trajectory.size(), 8u);
    EXPECT_EQ(kind_of(r.params), kind);
    EXPECT_EQ(r.kind, kind);
    EXPECT_NE(r.top2[0], r.top2[1]);
    for (Real v : r.adversarial.data()) {
      EXPECT_GE(v, 0);
      EXPECT_LE(v, 1);
    }
  }
}

// alpha -> 0 reduces the target to the true label; a confidently classified
// sample keeps its prediction.
TEST(SynthesizeSample, VanishingAlphaKeepsPrediction) {
  const EmbeddedNet& net = trained_net();
  SynthesisConfig cfg;
  cfg.alpha = Real(1e-6);
  cfg.stop_rule = StopRule::fixed_steps;
  cfg.max_steps = 20;
  std::size_t checked = 0;
  for (std::size_t i = 0; i < 40 && checked < 10; ++i) {
    const Tensor p = net.predict(mnist_test().image(i).reshaped({1, 1, 28, 28}));
    if (p[static_cast<std::size_t>(mnist_test().label(i))] < 0.99) continue;
    ++checked;
    const auto r = synthesize_sample(mnist_test().image(i), mnist_test().label(i), net, cfg, ManipulatorKind::affine, i);
    EXPECT_EQ(r.prediction, mnist_test().label(i));
    EXPECT_LT(r.loss_trajectory.back(), 0.05);
  }
  EXPECT_EQ(checked, 10u);
}

TEST(SynthesizeSample, StopOnMarginConvergesWithinTau) {
  const EmbeddedNet& net = trained_net();
  SynthesisConfig cfg;
  cfg.stop_rule = StopRule::stop_on_margin;
  std::size_t converged = 0;
  for (std::size_t i = 0; i < 30; ++i) {
    const auto kind = i % 2 ? ManipulatorKind::grid : ManipulatorKind::affine;
    const auto r = synthesize_sample(mnist_test().image(i), mnist_test().label(i), net, cfg, kind, i);
    if (r.steps == cfg.max_steps) continue;
    ++converged;
    EXPECT_LE(r.margin, cfg.margin + 1e-3) << "sample " << i;
  }
  EXPECT_GT(converged, 15u);
}

TEST(SynthesizeSample, SmallStepsReduceLossOnMostSamples) {
  const EmbeddedNet& net = trained_net();
  SynthesisConfig cfg;
  cfg.stop_rule = StopRule::fixed_steps;
  cfg.max_steps = 20;
  cfg.affine_learning_rate = Real(0.01);
  cfg.grid_learning_rate = Real(0.02);
  cfg.erase_learning_rate = Real(0.02);
  const auto before = net.checksum();
  const auto batch = synthesize_batch(first_n(mnist_test(), 100), net, cfg, {});
  EXPECT_EQ(net.checksum(), before);
  const auto reduced = std::count_if(batch.records.begin(), batch.records.end(),
                                     [](const SampleRecord& r) { return r.loss_reduced; });
  RecordProperty("reduced", static_cast<int>(reduced));
  EXPECT_GE(reduced, 90);
}

TEST(SynthesizeBatch, EmptyInputEmptyOutput) {
  const auto out = synthesize_batch(LabeledDataset{}, trained_net(), SynthesisConfig{}, {});
  EXPECT_TRUE(out.dataset.empty());
  EXPECT_TRUE(out.records.empty());
}

TEST(SynthesizeBatch, OrderProvenanceAndWorkerIndependence) {
  const EmbeddedNet& net = trained_net();
  const LabeledDataset input = first_n(mnist_test(), 24);
  SynthesisConfig cfg;
  cfg.max_steps = 10;
  BatchOptions options{3, 99, 1, 1};
  const auto one = synthesize_batch(input, net, cfg, options);
  options.workers = 4;
  const auto four = synthesize_batch(input, net, cfg, options);
  ASSERT_EQ(one.dataset.size(), input.size());
  ASSERT_EQ(four.dataset.size(), input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    EXPECT_EQ(one.dataset.image(i).storage(), four.dataset.image(i).storage());
    EXPECT_EQ(one.dataset.label(i), input.label(i));
    const auto kind = static_cast<ManipulatorKind>(i % 3);
    EXPECT_EQ(one.dataset.provenance(i), Provenance::synthesized(3, kind));
    EXPECT_EQ(one.records[i].kind, kind);
    EXPECT_EQ(one.records[i].steps, four.records[i].steps);
    EXPECT_EQ(one.records[i].final_loss, four.records[i].final_loss);
  }
}

TEST(SynthesizeBatch, VariantsUseDistinctSeeds) {
  const EmbeddedNet& net = trained_net();
  SynthesisConfig cfg;
  cfg.manipulator = ManipulatorKind::grid;
  cfg.max_steps = 3;
  const auto out = synthesize_batch(first_n(mnist_test(), 2), net, cfg, {0, 5, 1, 3});
  ASSERT_EQ(out.records.size(), 6u);
  EXPECT_EQ(out.records[4].source_index, 1u);
  EXPECT_EQ(out.records[4].variant, 1u);
  EXPECT_NE(out.dataset.image(0).storage(), out.dataset.image(1).storage());
}

TEST(SynthesizeBatch, NonFiniteSampleAbortsAlone) {
  const EmbeddedNet& net = trained_net();
  LabeledDataset input = first_n(mnist_test(), 3);
  Tensor bad = mnist_test().image(3);
  bad[100] = std::numeric_limits<Real>::quiet_NaN();
  input.add(bad, mnist_test().label(3));
  SynthesisConfig cfg;
  cfg.manipulator = ManipulatorKind::erase;
  cfg.max_steps = 2;
  const auto out = synthesize_batch(input, net, cfg, {});
  EXPECT_EQ(out.aborted, 1u);
  EXPECT_EQ(out.dataset.size(), 3u);
  ASSERT_EQ(out.records.size(), 4u);
  EXPECT_TRUE(out.records[3].aborted);
  EXPECT_NE(out.records[3].error.find("non-finite"), std::string::npos);
}

// The illustrated case: an affine manipulation turning a "2" into an "8".
TEST(SynthesizeBatch, AffineTurnsSomeTwoIntoEight) {
  const EmbeddedNet& net = trained_net();
  LabeledDataset twos;
  const LabeledDataset& train = limited_mnist(1000);
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.label(i) == 2) twos.add(train.image(i), 2);
  SynthesisConfig cfg;
  cfg.manipulator = ManipulatorKind::affine;
  const auto out = synthesize_batch(twos, net, cfg, {1, 0, 1, 1});
  const auto to_eight = std::count_if(out.records.begin(), out.records.end(),
                                      [](const SampleRecord& r) { return r.prediction == 8; });
  RecordProperty("two_to_eight", static_cast<int>(to_eight));
  EXPECT_GT(to_eight, 0);
}
