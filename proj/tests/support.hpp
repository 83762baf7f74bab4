#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>

#include "scnn/idx.hpp"
#include "scnn/model.hpp"

SCNN_NAMESPACE_BEGIN
namespace testing_support {

inline std::filesystem::path data_dir() { return SCNN_TEST_DATA_DIR; }
inline std::filesystem::path mnist_dir() { return data_dir() / "mnist"; }

inline const LabeledDataset& mnist_train() {
  static const LabeledDataset ds =
      load_idx(mnist_dir() / "train-images-idx3-ubyte.gz", mnist_dir() / "train-labels-idx1-ubyte.gz");
  return ds;
}

inline const LabeledDataset& mnist_test() {
  static const LabeledDataset ds =
      load_idx(mnist_dir() / "t10k-images-idx3-ubyte.gz", mnist_dir() / "t10k-labels-idx1-ubyte.gz");
  return ds;
}

/// Stratified limited-MNIST subset of the training split.
inline LabeledDataset limited_mnist(std::size_t n, std::uint64_t seed = 0) {
  return subset(mnist_train(), n, seed, true);
}

inline Tensor random_tensor(Shape shape, std::uint64_t seed, Real lo = -1, Real hi = 1) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Real> d(lo, hi);
  for (Real& v : t.data()) v = d(rng);
  return t;
}

/// 1x12x12 input, two conv blocks, four classes.
inline NetConfig tiny_net() {
  NetConfig c;
  c.height = 12;
  c.width = 12;
  c.filters = {3, 4};
  c.hidden = 8;
  c.classes = 4;
  return c;
}

inline LabeledDataset random_dataset(std::size_t n, const NetConfig& net, std::uint64_t seed) {
  LabeledDataset ds;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    ds.add(random_tensor({net.channels, net.height, net.width}, rng(), 0, 1),
           static_cast<int>(i % net.classes));
  }
  return ds;
}

/// Fresh directory under the gtest temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::path(::testing::TempDir()) /
                   ("scnn_" + name + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
SCNN_NAMESPACE_END
