#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "svda/tensor.hpp"

namespace svda {

/// 8-bit NCHW images with integer labels.
struct Dataset {
  std::size_t n = 0, c = 0, h = 0, w = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  std::string split;

  std::size_t image_size() const { return c * h * w; }
  /// Images as floats in [0,255], in the order given.
  Tensor<float> images(std::span<const std::size_t> idx) const;
  Tensor<float> images(std::size_t begin, std::size_t count) const;
  std::vector<int> labels_of(std::span<const std::size_t> idx) const;
  Dataset subset(std::span<const std::size_t> idx) const;
  void validate(int num_classes) const;
};

inline constexpr int kShapeClasses = 10;
extern const char* const kShapeNames[kShapeClasses];

/// Colored geometric primitives on random backgrounds with pixel noise,
/// 3×32×32, labels balanced to within one.
Dataset generate_shapes(std::uint64_t seed, std::size_t n, std::string split = "train");

void save_images(const std::filesystem::path& path, const Dataset& d);
void save_labels(const std::filesystem::path& path, const Dataset& d);
Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace svda
