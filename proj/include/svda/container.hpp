#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "svda/tensor.hpp"

namespace svda::io {

/// Tagged binary container shared by checkpoints, activation dumps and
/// adversarial batches:
///   "SVDA" | u32 version | u32 count | count × blob
///   blob = u16 name_len | name | u8 dtype | u8 rank | rank × u32 dim | raw data
/// Everything little-endian.
inline constexpr char kMagic[4] = {'S', 'V', 'D', 'A'};
inline constexpr std::uint32_t kVersion = 1;

enum class DType : std::uint8_t { f32 = 0, u8 = 1, u32 = 2 };

std::size_t dtype_size(DType t);

struct Blob {
  std::string name;
  DType dtype = DType::f32;
  Shape dims;
  std::vector<std::uint8_t> bytes;

  static Blob f32(std::string name, const Tensor<float>& t);
  static Blob f32(std::string name, Shape dims, const std::vector<float>& v);
  static Blob u32(std::string name, const std::vector<std::uint32_t>& v);
  static Blob u8(std::string name, Shape dims, std::vector<std::uint8_t> v);
  static Blob text(std::string name, std::string_view s);

  Tensor<float> as_f32() const;
  std::vector<std::uint32_t> as_u32() const;
  std::string as_text() const;
};

class FormatError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, bad_version, truncated, structural, io };
  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::vector<std::uint8_t> encode(const std::vector<Blob>& blobs);
std::vector<Blob> decode(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
/// Writes to a sibling temp file, then renames over `path`.
void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

void save(const std::filesystem::path& path, const std::vector<Blob>& blobs);
std::vector<Blob> load(const std::filesystem::path& path);

/// Lookup by name; throws a structural FormatError when absent.
const Blob& find(const std::vector<Blob>& blobs, std::string_view name);
const Blob* find_opt(const std::vector<Blob>& blobs, std::string_view name);

/// Little-endian cursor helpers, also used by the dataset files.
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  void take(void* dst, std::size_t n);
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace svda::io
