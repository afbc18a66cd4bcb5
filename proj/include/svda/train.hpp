#pragma once

#include <cstdint>
#include <vector>

#include "svda/dataset.hpp"
#include "svda/model.hpp"

namespace svda::nn {

struct TrainOptions {
  std::size_t epochs = 5;
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_acc = 0.0;  ///< over the minibatches seen this epoch
  double test_acc = 0.0;   ///< NaN without a test set
};

struct TrainResult {
  std::vector<EpochMetrics> metrics;
  TrainingInfo info;
};

/// SGD with momentum on mean cross-entropy. Minibatch order is a seeded
/// shuffle per epoch, so a fixed seed reproduces weights and metrics exactly.
TrainResult train(LayerGraph& model, const Dataset& train_set, const Dataset* test_set, const TrainOptions& opt);

double accuracy(const LayerGraph& model, const Dataset& d, int threads = 1);

}  // namespace svda::nn
