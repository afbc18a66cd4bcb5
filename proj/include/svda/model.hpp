#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "svda/graph.hpp"
#include "svda/tensor.hpp"

namespace svda::nn {

enum class LayerKind {
  scale,        ///< multiply by a fixed factor (pixel normalization)
  conv_block,   ///< conv → ReLU → optional pooling
  global_pool,  ///< N×C×H×W → N×C mean
  dense,        ///< affine, optional ReLU
};

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::scale;
  float factor = 1.0f;  // scale
  int stride = 1, pad = 0;
  std::optional<PoolKind> pool;  // 2×2, stride 2, after the ReLU
  bool relu = false;             // dense
  /// conv: {weight O×C×k×k, bias O}; dense: {weight D×M, bias M}.
  std::vector<Tensor<float>> params;
  /// Per-image output shape (C,H,W) or (D).
  Shape out_shape;
};

/// A named, ordered stack of layers with an input spec.
struct LayerGraph {
  std::string arch;
  std::size_t in_c = 3, in_h = 32, in_w = 32;
  int num_classes = 10;
  std::vector<Layer> layers;

  std::vector<std::string> layer_names() const;
  /// Throws listing every valid name when `name` is unknown.
  std::size_t index_of(std::string_view name) const;
  const Layer& layer(std::string_view name) const { return layers[index_of(name)]; }
  std::size_t param_count() const;
};

inline constexpr const char* kArchs[] = {"convnet_a", "convnet_b", "convnet_c"};

/// He-initialized toy CNN. Layers: scale, block1..block4, pool, [hidden], fc.
LayerGraph build_model(std::string_view arch, int num_classes, std::uint64_t seed);

/// Parameters of a model placed on a graph (as trainable leaves or as
/// constants) plus the split forward passes over them.
template <class T>
class Bound {
 public:
  Bound(const LayerGraph& model, Graph<T>& g, bool trainable = false);

  Var full(Var x) const;
  Var to_layer(Var x, std::string_view name) const;
  Var from_layer(Var feature, std::string_view name) const;
  /// Applies layers [begin, end).
  Var run(Var x, std::size_t begin, std::size_t end) const;

  /// Trainable leaves in layer order (weight, bias per layer).
  const std::vector<Var>& params() const { return flat_; }
  Graph<T>& graph() const { return g_; }
  const LayerGraph& model() const { return model_; }

 private:
  void check_input(Var x, std::size_t layer) const;

  const LayerGraph& model_;
  Graph<T>& g_;
  std::vector<std::vector<Var>> vars_;
  std::vector<Var> flat_;
};

extern template class Bound<float>;
extern template class Bound<double>;

// Graph-free conveniences on 32-bit tensors.
Tensor<float> forward_full(const LayerGraph& m, const Tensor<float>& batch);
Tensor<float> forward_to_layer(const LayerGraph& m, const Tensor<float>& batch, std::string_view name);
Tensor<float> forward_from_layer(const LayerGraph& m, const Tensor<float>& feature, std::string_view name);
/// Argmax of logits per image, evaluated image by image on up to `threads` workers.
std::vector<int> predict(const LayerGraph& m, const Tensor<float>& batch, int threads = 1);

struct TrainingInfo {
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  double final_test_acc = 0.0;
};

/// Checkpoint: architecture, per-layer weight blobs, training metadata.
void save_checkpoint(const LayerGraph& m, const TrainingInfo& info, const std::filesystem::path& path);
LayerGraph load_checkpoint(const std::filesystem::path& path, TrainingInfo* info = nullptr);

}  // namespace svda::nn
