#include "ambiflow/binio.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <charconv>
#include <fstream>
#include <iterator>

#include "ambiflow/error.hpp"

namespace ambiflow::binio {

namespace {

template <class T>
T to_le(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto le = to_le(v);
  const auto* p = reinterpret_cast<const std::uint8_t*>(&le);
  out.insert(out.end(), p, p + sizeof(T));
}

}  // namespace

void Writer::u32(std::uint32_t v) { put(bytes_, v); }
void Writer::u64(std::uint64_t v) { put(bytes_, v); }
void Writer::f32(float v) { put(bytes_, std::bit_cast<std::uint32_t>(v)); }
void Writer::f64(double v) { put(bytes_, std::bit_cast<std::uint64_t>(v)); }
void Writer::raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
void Writer::raw(std::span<const std::uint8_t> s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

void Reader::need(std::size_t n) const {
  if (pos_ + n > bytes_.size()) {
    throw TruncatedError("unexpected end of data at byte " + std::to_string(pos_));
  }
}

std::uint8_t Reader::u8() {
  need(1);
  return bytes_[pos_++];
}

namespace {
template <class T>
T get(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return to_le(v);
}
}  // namespace

std::uint32_t Reader::u32() {
  need(4);
  return get<std::uint32_t>(bytes_, pos_);
}

std::uint64_t Reader::u64() {
  need(8);
  return get<std::uint64_t>(bytes_, pos_);
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::raw(std::size_t n) {
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace ambiflow::binio
