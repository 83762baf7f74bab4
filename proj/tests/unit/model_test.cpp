#include <algorithm>
#include <numeric>

#include "scnn/model.hpp"
#include "scnn/ops.hpp"
#include "support.hpp"

using namespace scnn;
using namespace scnn::testing_support;

namespace {

TrainOptions quick(std::size_t epochs, std::uint64_t seed = 0) {
  TrainOptions o;
  o.epochs = epochs;
  o.batch_size = 8;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(NetConfig, Presets) {
  EXPECT_EQ(NetConfig::full().filters, (std::vector<std::size_t>{64, 128, 256}));
  EXPECT_EQ(NetConfig::full().hidden, 512u);
  EXPECT_EQ(NetConfig::desk().filters, (std::vector<std::size_t>{16, 32, 64}));
  EXPECT_EQ(NetConfig::desk().hidden, 128u);
  EXPECT_EQ(NetConfig::for_scale(parse_net_scale("desk")), NetConfig::desk());
  EXPECT_THROW(parse_net_scale("huge"), std::invalid_argument);
}

TEST(EmbeddedNet, ZeroedOutputLayerGivesUniformProbabilities) {
  EmbeddedNet net(tiny_net(), 1);
  for (auto& [name, t] : net.named_tensors())
    if (name.starts_with("output.")) std::fill(t->data().begin(), t->data().end(), Real(0));
  const Tensor p = net.predict(random_tensor({3, 1, 12, 12}, 2, 0, 1));
  for (Real v : p.data()) EXPECT_NEAR(v, 0.25, 1e-6);
}

TEST(EmbeddedNet, ProbabilitiesSumToOne) {
  EmbeddedNet net(NetConfig::desk(), 3);
  const Tensor p = net.predict(random_tensor({4, 1, 28, 28}, 4, 0, 1));
  ASSERT_EQ(p.shape(), (Shape{4, 10}));
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 10; ++k) s += p[r * 10 + k];
    EXPECT_NEAR(s, 1, 1e-5);
  }
}

TEST(EmbeddedNet, RejectsWrongInputShape) {
  EmbeddedNet net(tiny_net(), 5);
  EXPECT_THROW(net.predict(Tensor({1, 1, 28, 28})), ShapeError);
  EXPECT_THROW(net.predict(Tensor({1, 12, 12})), ShapeError);
}

TEST(EmbeddedNet, SameSeedSameWeights) {
  EXPECT_EQ(EmbeddedNet(tiny_net(), 7).checksum(), EmbeddedNet(tiny_net(), 7).checksum());
  EXPECT_NE(EmbeddedNet(tiny_net(), 7).checksum(), EmbeddedNet(tiny_net(), 8).checksum());
}

TEST(EmbeddedNet, NamedTensorsIncludeStatistics) {
  EmbeddedNet net(tiny_net(), 9);
  std::vector<std::string> names;
  for (const auto& [name, t] : std::as_const(net).named_tensors()) names.push_back(name);
  EXPECT_NE(std::find(names.begin(), names.end(), "block0.bn.running_var"), names.end());
  EXPECT_NE(std::find(names.begin(), names.end(), "hidden.weight"), names.end());
  EXPECT_EQ(net.parameters().size() + 2 * tiny_net().filters.size(), names.size());
}

TEST(Freeze, TrainModeForwardAndTrainingRejected) {
  EmbeddedNet net(tiny_net(), 10);
  net.freeze();
  net.freeze();  // idempotent
  EXPECT_TRUE(net.frozen());
  Graph g;
  EXPECT_THROW(net.logits(g, g.input(Tensor({1, 1, 12, 12})), Mode::train), FrozenNetError);
  EXPECT_THROW(train(net, random_dataset(4, tiny_net(), 1), quick(1)), FrozenNetError);
}

TEST(Freeze, InferenceOnFrozenNetLeavesWeightsUntouched) {
  EmbeddedNet net(tiny_net(), 11);
  net.freeze();
  const auto before = net.checksum();
  Graph g;
  Var x = g.input(random_tensor({2, 1, 12, 12}, 12, 0, 1), true);
  Var p = net.forward(g, x);
  g.backward(ops::sum(g, ops::mul(g, p, g.input(random_tensor({2, 4}, 13)))));
  EXPECT_FALSE(g.grad(x).empty());
  for (Tensor* t : net.parameters()) EXPECT_FALSE(t->has_grad());
  EXPECT_EQ(net.checksum(), before);
}

TEST(Freeze, UnfreezeThenTrainChangesChecksum) {
  EmbeddedNet net(tiny_net(), 14);
  net.freeze();
  net.unfreeze();
  const auto before = net.checksum();
  train(net, random_dataset(8, tiny_net(), 2), quick(1));
  EXPECT_NE(net.checksum(), before);
}

TEST(Train, ZeroEpochsLeavesWeights) {
  EmbeddedNet net(tiny_net(), 15);
  const auto before = net.checksum();
  EXPECT_TRUE(train(net, random_dataset(8, tiny_net(), 3), quick(0)).epochs.empty());
  EXPECT_EQ(net.checksum(), before);
}

TEST(Train, MemorizesTenSamples) {
  EmbeddedNet net(tiny_net(), 16);
  const LabeledDataset ds = random_dataset(10, tiny_net(), 4);
  TrainOptions o = quick(150);
  o.batch_size = 10;
  o.optimizer.learning_rate = Real(0.01);
  const auto history = train(net, ds, o);
  EXPECT_LT(history.epochs.back().train_loss, 0.01);
  EXPECT_EQ(evaluate(net, ds).accuracy, 1.0);
}

TEST(Train, FixedSeedIsBitIdentical) {
  const LabeledDataset ds = random_dataset(20, tiny_net(), 5);
  EmbeddedNet a(tiny_net(), 17), b(tiny_net(), 17);
  const auto ha = train(a, ds, quick(3, 9)), hb = train(b, ds, quick(3, 9));
  EXPECT_EQ(a.checksum(), b.checksum());
  for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(ha.epochs[e].train_loss, hb.epochs[e].train_loss);
}

TEST(Evaluate, TrivialAccuracies) {
  EmbeddedNet net(tiny_net(), 18);
  const Tensor img = random_tensor({1, 12, 12}, 19, 0, 1);
  const Tensor p = net.predict(img.reshaped({1, 1, 12, 12}));
  const int predicted = static_cast<int>(std::max_element(p.data().begin(), p.data().end()) - p.data().begin());
  LabeledDataset right, wrong;
  right.add(img, predicted);
  wrong.add(img, (predicted + 1) % 4);
  EXPECT_EQ(evaluate(net, right).accuracy, 1.0);
  EXPECT_EQ(evaluate(net, wrong).accuracy, 0.0);
  EXPECT_THROW(evaluate(net, LabeledDataset{}), std::invalid_argument);
}

TEST(Evaluate, InvariantUnderPermutation) {
  EmbeddedNet net(tiny_net(), 20);
  const LabeledDataset ds = random_dataset(30, tiny_net(), 6);
  LabeledDataset reversed;
  for (std::size_t i = ds.size(); i-- > 0;) reversed.add(ds.image(i), ds.label(i));
  EXPECT_DOUBLE_EQ(evaluate(net, ds, 7).accuracy, evaluate(net, reversed, 4).accuracy);
}

TEST(LabeledDataset, ValidatesShapesAndLabels) {
  LabeledDataset ds;
  ds.add(Tensor({1, 4, 4}), 1);
  EXPECT_THROW(ds.add(Tensor({1, 4, 5}), 1), ShapeError);
  EXPECT_THROW(ds.add(Tensor({1, 4, 4}), -1), std::out_of_range);
  ds.add(Tensor({1, 4, 4}), 7);
  EXPECT_THROW(ds.validate(5), std::out_of_range);
  const std::size_t idx[] = {1, 0};
  EXPECT_EQ(ds.batch(idx).shape(), (Shape{2, 1, 4, 4}));
  EXPECT_EQ(ds.batch_labels(idx), (std::vector<int>{7, 1}));
}

// Desk net on limited-MNIST-1000, evaluated on the held-out split.
TEST(DeskNet, LimitedMnistReachesNinetyPercent) {
  EmbeddedNet net(NetConfig::desk(), 21);
  TrainOptions o;
  o.epochs = 20;
  train(net, limited_mnist(1000), o);
  const double acc = evaluate(net, mnist_test()).accuracy;
  RecordProperty("test_accuracy", std::to_string(acc));
  EXPECT_GE(acc, 0.90);
}
