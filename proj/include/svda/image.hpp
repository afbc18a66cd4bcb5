#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svda/tensor.hpp"

namespace svda::harness {

struct GrayImage {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
};

std::string encode_pgm(const GrayImage& img);
GrayImage decode_pgm(const std::string& bytes);

/// h×w map in [0,1] → 8-bit image of out_h×out_w, nearest neighbour.
GrayImage map_to_image(const Tensor<float>& map, std::size_t out_h, std::size_t out_w);

struct PlotSeries {
  std::vector<double> y;  ///< one value per x position, expected in [0,1]
  bool dashed = false;
};

/// Line plot over evenly spaced categorical x positions, y axis fixed to
/// [0,1] with gridlines every 0.25. Dark lines on a white background.
GrayImage line_plot(const std::vector<PlotSeries>& series, std::size_t width = 320, std::size_t height = 240);

}  // namespace svda::harness
