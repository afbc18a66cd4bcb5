#include "svda/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "svda/rng.hpp"

namespace svda::nn {

double accuracy(const LayerGraph& model, const Dataset& d, int threads) {
  d.validate(model.num_classes);
  constexpr std::size_t kChunk = 256;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < d.n; begin += kChunk) {
    const auto count = std::min(kChunk, d.n - begin);
    const auto pred = predict(model, d.images(begin, count), threads);
    for (std::size_t i = 0; i < count; ++i) correct += pred[i] == d.labels[begin + i];
  }
  return static_cast<double>(correct) / static_cast<double>(d.n);
}

TrainResult train(LayerGraph& model, const Dataset& train_set, const Dataset* test_set, const TrainOptions& opt) {
  if (train_set.n == 0) throw std::invalid_argument("train: empty dataset");
  train_set.validate(model.num_classes);
  if (train_set.c != model.in_c || train_set.h != model.in_h || train_set.w != model.in_w)
    throw std::invalid_argument("train: dataset images are " + std::to_string(train_set.c) + "x" +
                                std::to_string(train_set.h) + "x" + std::to_string(train_set.w) + " but " +
                                model.arch + " expects " + std::to_string(model.in_c) + "x" +
                                std::to_string(model.in_h) + "x" + std::to_string(model.in_w));
  if (opt.batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");

  std::vector<Tensor<float>*> params;
  for (auto& l : model.layers)
    for (auto& p : l.params) params.push_back(&p);
  std::vector<std::vector<float>> velocity;
  for (auto* p : params) velocity.emplace_back(p->size(), 0.0f);

  TrainResult result;
  result.info.seed = opt.seed;
  std::vector<std::size_t> order(train_set.n);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(opt.seed, epoch);
    for (std::size_t i = order.size(); i-- > 1;)
      std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);

    double loss_sum = 0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += opt.batch_size) {
      const auto count = std::min(opt.batch_size, order.size() - begin);
      const std::span<const std::size_t> idx(order.data() + begin, count);
      const auto labels = train_set.labels_of(idx);

      Graph<float> g;
      Bound<float> bound(model, g, true);
      const Var logits = bound.full(g.constant(train_set.images(idx)));
      const Var loss = g.cross_entropy(logits, labels);
      g.backward(loss);

      const auto& lv = g.value(logits);
      const auto c = static_cast<std::size_t>(model.num_classes);
      for (std::size_t i = 0; i < count; ++i) {
        const auto* row = lv.data.data() + i * c;
        correct += static_cast<int>(std::max_element(row, row + c) - row) == labels[i];
      }
      loss_sum += g.value(loss).data[0];
      ++batches;

      const auto& leaves = bound.params();
      for (std::size_t k = 0; k < params.size(); ++k) {
        const auto& grad = g.grad(leaves[k]);
        auto& v = velocity[k];
        auto& w = params[k]->data;
        for (std::size_t j = 0; j < w.size(); ++j) {
          v[j] = static_cast<float>(opt.momentum) * v[j] + grad[j];
          w[j] -= static_cast<float>(opt.lr) * v[j];
        }
      }
    }
    EpochMetrics m;
    m.epoch = epoch + 1;
    m.loss = loss_sum / static_cast<double>(batches);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.n);
    m.test_acc = test_set ? accuracy(model, *test_set) : std::numeric_limits<double>::quiet_NaN();
    result.metrics.push_back(m);
  }
  result.info.epochs = opt.epochs;
  result.info.final_test_acc = result.metrics.empty() ? 0.0 : result.metrics.back().test_acc;
  if (std::isnan(result.info.final_test_acc)) result.info.final_test_acc = 0.0;
  return result;
}

}  // namespace svda::nn
