#include "svda/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

namespace svda::harness {

std::string encode_pgm(const GrayImage& img) {
  if (img.pixels.size() != img.width * img.height) throw std::invalid_argument("encode_pgm: pixel count mismatch");
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.pixels.begin(), img.pixels.end());
  return out;
}

GrayImage decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const auto b = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (b == pos) throw std::invalid_argument("decode_pgm: truncated header");
    return bytes.substr(b, pos - b);
  };
  if (token() != "P5") throw std::invalid_argument("decode_pgm: not a binary PGM");
  GrayImage img;
  img.width = std::stoul(token());
  img.height = std::stoul(token());
  if (token() != "255") throw std::invalid_argument("decode_pgm: only maxval 255 is supported");
  ++pos;
  if (bytes.size() - std::min(pos, bytes.size()) != img.width * img.height)
    throw std::invalid_argument("decode_pgm: payload size does not match header");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

GrayImage map_to_image(const Tensor<float>& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 2) throw std::invalid_argument("map_to_image: expected an h×w map");
  const std::size_t h = map.dim(0), w = map.dim(1);
  GrayImage img{out_w, out_h, std::vector<std::uint8_t>(out_h * out_w)};
  for (std::size_t y = 0; y < out_h; ++y)
    for (std::size_t x = 0; x < out_w; ++x) {
      const float v = map.data[(y * h / out_h) * w + x * w / out_w];
      img.at(x, y) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    }
  return img;
}

namespace {

void line(GrayImage& img, long x0, long y0, long x1, long y1, std::uint8_t v, bool dashed) {
  const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  for (long step = 0;; ++step) {
    if ((!dashed || (step / 4) % 2 == 0) && x0 >= 0 && y0 >= 0 && x0 < static_cast<long>(img.width) &&
        y0 < static_cast<long>(img.height))
      img.at(static_cast<std::size_t>(x0), static_cast<std::size_t>(y0)) = v;
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

GrayImage line_plot(const std::vector<PlotSeries>& series, std::size_t width, std::size_t height) {
  if (width < 40 || height < 40) throw std::invalid_argument("line_plot: image too small");
  GrayImage img{width, height, std::vector<std::uint8_t>(width * height, 255)};
  const long left = 24, right = static_cast<long>(width) - 12, top = 12, bottom = static_cast<long>(height) - 20;
  auto ypix = [&](double v) { return bottom - std::lround(std::clamp(v, 0.0, 1.0) * static_cast<double>(bottom - top)); };

  for (int g = 1; g < 4; ++g) line(img, left, ypix(g * 0.25), right, ypix(g * 0.25), 210, false);
  line(img, left, top, left, bottom, 0, false);
  line(img, left, bottom, right, bottom, 0, false);
  line(img, left, top, right, top, 0, false);
  line(img, right, top, right, bottom, 0, false);

  std::size_t npts = 0;
  for (const auto& s : series) npts = std::max(npts, s.y.size());
  auto xpix = [&](std::size_t i) {
    if (npts < 2) return (left + right) / 2;
    return left + 8 + static_cast<long>(i) * (right - left - 16) / static_cast<long>(npts - 1);
  };
  for (std::size_t i = 0; i < npts; ++i) line(img, xpix(i), bottom, xpix(i), bottom + 4, 0, false);

  for (const auto& s : series) {
    const std::uint8_t shade = s.dashed ? 110 : 0;
    for (std::size_t i = 0; i < s.y.size(); ++i) {
      const long x = xpix(i), y = ypix(s.y[i]);
      if (i + 1 < s.y.size()) line(img, x, y, xpix(i + 1), ypix(s.y[i + 1]), shade, s.dashed);
      for (long d = -2; d <= 2; ++d) line(img, x - 2, y + d, x + 2, y + d, shade, false);
    }
  }
  return img;
}

}  // namespace svda::harness
