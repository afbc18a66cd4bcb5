#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "svda/model.hpp"

namespace svda::analysis {

using Matrix = Eigen::MatrixXd;

/// ‖YᵀX‖²_F / (‖XᵀX‖_F·‖YᵀY‖_F), evaluated through the n×n Gram matrices.
/// With `center`, column means are removed from both first.
double linear_cka(const Matrix& x, const Matrix& y, bool center = false);

/// Activations of one layer, flattened to n samples × d features.
struct ActivationSet {
  std::string model_id;
  std::string layer;
  Matrix matrix;
  std::vector<std::uint32_t> sample_ids;
};

ActivationSet collect(const nn::LayerGraph& model, const Tensor<float>& batch, const std::string& layer,
                      const std::vector<std::uint32_t>& sample_ids);

struct CKARow {
  std::string models;   ///< "convnet_a" or "convnet_a->convnet_b"
  std::string layer;
  std::string variant;  ///< clean, adv_no_svd, adv_svd, or clean_vs_adv
  double cka = 0.0;
};

struct CKAReport {
  std::vector<CKARow> rows;

  std::string to_csv() const;
  static CKAReport from_csv(const std::string& text);
};

/// Clean vs adversarial activations of the source model, one row per layer.
CKAReport cka_layerwise(const nn::LayerGraph& model, const Tensor<float>& clean, const Tensor<float>& adv,
                        const std::vector<std::uint32_t>& clean_ids, const std::vector<std::uint32_t>& adv_ids,
                        const std::vector<std::string>& layers, const std::string& variant = "clean_vs_adv",
                        bool center = false);

/// Source-model vs target-model activations on the same inputs, for each
/// variant batch and each layer.
struct VariantBatch {
  std::string variant;
  const Tensor<float>* images;
};
CKAReport cka_crossmodel(const nn::LayerGraph& source, const nn::LayerGraph& target,
                         const std::vector<VariantBatch>& batches,
                         const std::vector<std::string>& layers = {"pool", "fc"}, bool center = false);

/// Activation dump: one f32 blob per layer plus the sample-id table.
void save_activations(const std::filesystem::path& path, const std::vector<ActivationSet>& sets);
std::vector<ActivationSet> load_activations(const std::filesystem::path& path);

}  // namespace svda::analysis
