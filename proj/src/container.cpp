#include "svda/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace svda::io {

static_assert(std::endian::native == std::endian::little, "raw blob payloads assume a little-endian host");

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::u8: return 1;
    case DType::u32: return 4;
  }
  throw std::invalid_argument("unknown dtype");
}

namespace {

template <class V>
std::vector<std::uint8_t> raw(const std::vector<V>& v) {
  std::vector<std::uint8_t> out(v.size() * sizeof(V));
  if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
  return out;
}

template <class V>
std::vector<V> unraw(const Blob& b, DType want) {
  if (b.dtype != want) throw FormatError(FormatError::Kind::structural, "blob '" + b.name + "' has unexpected dtype");
  std::vector<V> out(b.bytes.size() / sizeof(V));
  if (!out.empty()) std::memcpy(out.data(), b.bytes.data(), b.bytes.size());
  return out;
}

}  // namespace

Blob Blob::f32(std::string name, const Tensor<float>& t) { return f32(std::move(name), t.shape, t.data); }

Blob Blob::f32(std::string name, Shape dims, const std::vector<float>& v) {
  if (numel(dims) != v.size()) throw std::invalid_argument("Blob::f32: dims do not match data for " + name);
  return Blob{std::move(name), DType::f32, std::move(dims), raw(v)};
}

Blob Blob::u32(std::string name, const std::vector<std::uint32_t>& v) {
  return Blob{std::move(name), DType::u32, Shape{v.size()}, raw(v)};
}

Blob Blob::u8(std::string name, Shape dims, std::vector<std::uint8_t> v) {
  if (numel(dims) != v.size()) throw std::invalid_argument("Blob::u8: dims do not match data for " + name);
  return Blob{std::move(name), DType::u8, std::move(dims), std::move(v)};
}

Blob Blob::text(std::string name, std::string_view s) {
  return Blob{std::move(name), DType::u8, Shape{s.size()}, std::vector<std::uint8_t>(s.begin(), s.end())};
}

Tensor<float> Blob::as_f32() const { return Tensor<float>(dims, unraw<float>(*this, DType::f32)); }
std::vector<std::uint32_t> Blob::as_u32() const { return unraw<std::uint32_t>(*this, DType::u32); }
std::string Blob::as_text() const {
  if (dtype != DType::u8) throw FormatError(FormatError::Kind::structural, "blob '" + name + "' is not text");
  return std::string(bytes.begin(), bytes.end());
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void Reader::need(std::size_t n) const {
  if (remaining() < n)
    throw FormatError(FormatError::Kind::truncated, what_ + ": truncated (needed " + std::to_string(n) +
                                                        " more bytes at offset " + std::to_string(pos_) + ")");
}

std::uint8_t Reader::u8() {
  need(1);
  return bytes_[pos_++];
}

std::uint16_t Reader::u16() {
  need(2);
  const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

void Reader::take(void* dst, std::size_t n) {
  need(n);
  if (n) std::memcpy(dst, bytes_.data() + pos_, n);
  pos_ += n;
}

std::vector<std::uint8_t> encode(const std::vector<Blob>& blobs) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(blobs.size()));
  for (const auto& b : blobs) {
    if (b.name.size() > 0xffff) throw std::invalid_argument("blob name too long: " + b.name.substr(0, 32));
    if (b.dims.size() > 0xff) throw std::invalid_argument("blob rank too large: " + b.name);
    if (numel(b.dims) * dtype_size(b.dtype) != b.bytes.size())
      throw std::invalid_argument("blob '" + b.name + "' payload does not match its dims");
    put_u16(out, static_cast<std::uint16_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    out.push_back(static_cast<std::uint8_t>(b.dtype));
    out.push_back(static_cast<std::uint8_t>(b.dims.size()));
    for (auto d : b.dims) put_u32(out, static_cast<std::uint32_t>(d));
    out.insert(out.end(), b.bytes.begin(), b.bytes.end());
  }
  return out;
}

std::vector<Blob> decode(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes, "container");
  char magic[4];
  if (bytes.size() < 4 || (r.take(magic, 4), std::memcmp(magic, kMagic, 4) != 0))
    throw FormatError(FormatError::Kind::bad_magic, "bad magic: not an SVDA container");
  const auto version = r.u32();
  if (version != kVersion)
    throw FormatError(FormatError::Kind::bad_version, "bad version: " + std::to_string(version) + " (expected " +
                                                          std::to_string(kVersion) + ")");
  const auto count = r.u32();
  std::vector<Blob> blobs;
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b;
    b.name.resize(r.u16());
    r.take(b.name.data(), b.name.size());
    const auto tag = r.u8();
    if (tag > 2) throw FormatError(FormatError::Kind::structural, "blob '" + b.name + "': unknown dtype tag " + std::to_string(tag));
    b.dtype = static_cast<DType>(tag);
    const auto rank = r.u8();
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      b.dims.push_back(r.u32());
      n *= b.dims.back();
      if (n > (std::size_t{1} << 34))
        throw FormatError(FormatError::Kind::structural, "blob '" + b.name + "': dims overflow");
    }
    b.bytes.resize(n * dtype_size(b.dtype));
    r.take(b.bytes.data(), b.bytes.size());
    blobs.push_back(std::move(b));
  }
  if (r.remaining() != 0)
    throw FormatError(FormatError::Kind::structural, "trailing bytes after " + std::to_string(count) + " blobs");
  return blobs;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_bytes_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::io, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError(FormatError::Kind::io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_bytes_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void save(const std::filesystem::path& path, const std::vector<Blob>& blobs) { write_bytes_atomic(path, encode(blobs)); }

std::vector<Blob> load(const std::filesystem::path& path) {
  try {
    return decode(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), path.string() + ": " + e.what());
  }
}

const Blob* find_opt(const std::vector<Blob>& blobs, std::string_view name) {
  for (const auto& b : blobs)
    if (b.name == name) return &b;
  return nullptr;
}

const Blob& find(const std::vector<Blob>& blobs, std::string_view name) {
  if (auto* b = find_opt(blobs, name)) return *b;
  throw FormatError(FormatError::Kind::structural, "missing blob '" + std::string(name) + "'");
}

}  // namespace svda::io
