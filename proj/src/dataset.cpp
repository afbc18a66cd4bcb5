#include "svda/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "svda/container.hpp"
#include "svda/rng.hpp"

namespace svda {

const char* const kShapeNames[kShapeClasses] = {"circle", "square",  "triangle", "ring",  "hollow_square",
                                                "plus",   "x_cross", "hbar",     "vbar",  "diamond"};

Tensor<float> Dataset::images(std::span<const std::size_t> idx) const {
  const auto sz = image_size();
  Tensor<float> t = Tensor<float>::zeros({idx.size(), c, h, w});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw std::out_of_range("Dataset::images: index " + std::to_string(idx[i]));
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(idx[i] * sz), sz, t.data.begin() + static_cast<std::ptrdiff_t>(i * sz));
  }
  return t;
}

Tensor<float> Dataset::images(std::size_t begin, std::size_t count) const {
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
  return images(idx);
}

std::vector<int> Dataset::labels_of(std::span<const std::size_t> idx) const {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(labels.at(i));
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> idx) const {
  Dataset d{idx.size(), c, h, w, {}, labels_of(idx), split};
  const auto t = images(idx);
  d.pixels.assign(t.data.begin(), t.data.end());
  return d;
}

void Dataset::validate(int num_classes) const {
  if (n == 0) throw std::invalid_argument("dataset is empty");
  if (pixels.size() != n * image_size() || labels.size() != n)
    throw std::invalid_argument("dataset arrays do not match header N=" + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw std::invalid_argument("label overflow: sample " + std::to_string(i) + " has label " +
                                  std::to_string(labels[i]) + " but the model has " + std::to_string(num_classes) +
                                  " classes");
}

namespace {

bool inside(int cls, double dx, double dy, double r, double half) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (cls) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return ax <= 0.8 * r && ay <= 0.8 * r;
    case 2: return dy >= -r && dy <= 0.8 * r && ax <= 0.55 * (dy + r);
    case 3: {
      const double d2 = dx * dx + dy * dy, inner = r - 2 * half;
      return d2 <= r * r && d2 >= inner * inner;
    }
    case 4: {
      const double s = 0.8 * r, in = s - 2 * half;
      return ax <= s && ay <= s && (ax > in || ay > in);
    }
    case 5: return (ax <= half && ay <= r) || (ay <= half && ax <= r);
    case 6: return ax <= 0.8 * r && ay <= 0.8 * r && (std::abs(dx - dy) <= 1.41 * half || std::abs(dx + dy) <= 1.41 * half);
    case 7: return ax <= r && ay <= half;
    case 8: return ay <= r && ax <= half;
    case 9: return ax + ay <= r;
  }
  return false;
}

std::uint8_t to_pixel(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Dataset generate_shapes(std::uint64_t seed, std::size_t n, std::string split) {
  if (n == 0) throw std::invalid_argument("generate_shapes: n must be positive");
  constexpr std::size_t kSide = 32;
  Dataset d{n, 3, kSide, kSide, std::vector<std::uint8_t>(n * 3 * kSide * kSide), std::vector<int>(n), std::move(split)};

  Rng order(seed, 0);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % kShapeClasses);
  for (std::size_t i = n; i-- > 1;)
    std::swap(d.labels[i], d.labels[static_cast<std::size_t>(order.uniform_int(0, static_cast<std::int64_t>(i)))]);

  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, 1 + i);
    // Random hues, but the shape is always brighter than the background.
    double bg[3], fg[3];
    for (int ch = 0; ch < 3; ++ch) {
      bg[ch] = rng.uniform(20, 130);
      fg[ch] = bg[ch] + rng.uniform(50, 110);
    }
    const double r = rng.uniform(7, 12);
    const double half = std::max(1.5, r / 5);
    const double cx = rng.uniform(r + 1, kSide - r - 1), cy = rng.uniform(r + 1, kSide - r - 1);
    auto* img = d.pixels.data() + i * d.image_size();
    for (std::size_t y = 0; y < kSide; ++y)
      for (std::size_t x = 0; x < kSide; ++x) {
        const bool on = inside(d.labels[i], x + 0.5 - cx, y + 0.5 - cy, r, half);
        for (int ch = 0; ch < 3; ++ch)
          img[(ch * kSide + y) * kSide + x] = to_pixel((on ? fg[ch] : bg[ch]) + 10 * rng.normal());
      }
  }
  return d;
}

namespace {

constexpr char kImagesMagic[4] = {'S', 'V', 'D', 'D'};
constexpr char kLabelsMagic[4] = {'S', 'V', 'D', 'L'};

void check_magic(io::Reader& r, const char (&magic)[4], const std::filesystem::path& path) {
  char m[4];
  try {
    r.take(m, 4);
  } catch (const io::FormatError&) {
    m[0] = 0;
  }
  if (std::memcmp(m, magic, 4) != 0)
    throw io::FormatError(io::FormatError::Kind::bad_magic,
                          path.string() + ": bad magic (expected " + std::string(magic, 4) + ")");
  if (const auto v = r.u32(); v != 1)
    throw io::FormatError(io::FormatError::Kind::bad_version, path.string() + ": bad version " + std::to_string(v));
}

}  // namespace

void save_images(const std::filesystem::path& path, const Dataset& d) {
  std::vector<std::uint8_t> out(kImagesMagic, kImagesMagic + 4);
  io::put_u32(out, 1);
  for (auto v : {d.n, d.c, d.h, d.w}) io::put_u32(out, static_cast<std::uint32_t>(v));
  out.insert(out.end(), d.pixels.begin(), d.pixels.end());
  io::write_bytes_atomic(path, out);
}

void save_labels(const std::filesystem::path& path, const Dataset& d) {
  std::vector<std::uint8_t> out(kLabelsMagic, kLabelsMagic + 4);
  io::put_u32(out, 1);
  io::put_u32(out, static_cast<std::uint32_t>(d.n));
  for (auto l : d.labels) out.push_back(static_cast<std::uint8_t>(l));
  io::write_bytes_atomic(path, out);
}

Dataset load_dataset(const std::filesystem::path& images, const std::filesystem::path& labels) {
  Dataset d;
  d.split = images.stem().string();
  {
    const auto bytes = io::read_bytes(images);
    io::Reader r(bytes, images.string());
    check_magic(r, kImagesMagic, images);
    d.n = r.u32();
    d.c = r.u32();
    d.h = r.u32();
    d.w = r.u32();
    // Guard the product before allocating.
    const long double total = static_cast<long double>(d.n) * d.c * d.h * d.w;
    if (total > static_cast<long double>(std::size_t{1} << 34))
      throw io::FormatError(io::FormatError::Kind::structural, images.string() + ": dim overflow (" +
                                                                   std::to_string(d.n) + "x" + std::to_string(d.c) +
                                                                   "x" + std::to_string(d.h) + "x" +
                                                                   std::to_string(d.w) + ")");
    d.pixels.resize(d.n * d.image_size());
    r.take(d.pixels.data(), d.pixels.size());
  }
  {
    const auto bytes = io::read_bytes(labels);
    io::Reader r(bytes, labels.string());
    check_magic(r, kLabelsMagic, labels);
    const auto n = r.u32();
    if (n != d.n)
      throw io::FormatError(io::FormatError::Kind::structural, labels.string() + ": " + std::to_string(n) +
                                                                   " labels for " + std::to_string(d.n) + " images");
    std::vector<std::uint8_t> raw(n);
    r.take(raw.data(), n);
    d.labels.assign(raw.begin(), raw.end());
  }
  if (d.n == 0) throw std::invalid_argument(images.string() + ": dataset is empty");
  return d;
}

}  // namespace svda
