#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include "cmow/errors.hpp"

namespace cmow::binary {

// Little-endian encoding helpers shared by the checkpoint and TDR1 formats.

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    buffer_.insert(buffer_.end(), p, p + n);
  }
  void tag(const char (&t)[5]) { bytes(t, 4); }

  template <typename U>
  void scalar(U value) {
    static_assert(std::is_arithmetic_v<U>);
    std::uint8_t raw[sizeof(U)];
    std::memcpy(raw, &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    bytes(raw, sizeof(U));
  }
  void u32(std::uint32_t v) { scalar(v); }
  void u64(std::uint64_t v) { scalar(v); }
  void f32(float v) { scalar(v); }

  // Writes values narrowed to float32.
  template <typename T>
  void f32_block(std::span<const T> values) {
    if constexpr (std::is_same_v<T, float> && std::endian::native == std::endian::little) {
      bytes(values.data(), values.size() * sizeof(float));
    } else {
      for (T v : values) f32(static_cast<float>(v));
    }
  }

  std::vector<std::uint8_t>& buffer() { return buffer_; }
  std::size_t size() const { return buffer_.size(); }

 private:
  std::vector<std::uint8_t> buffer_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> data, std::string what) : data_(data), what_(std::move(what)) {}

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_.data() + pos_, n);
    pos_ += n;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::string tag() {
    char t[4];
    bytes(t, 4);
    return std::string(t, 4);
  }

  template <typename U>
  U scalar() {
    std::uint8_t raw[sizeof(U)];
    bytes(raw, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    U value;
    std::memcpy(&value, raw, sizeof(U));
    return value;
  }
  std::uint32_t u32() { return scalar<std::uint32_t>(); }
  std::uint64_t u64() { return scalar<std::uint64_t>(); }
  float f32() { return scalar<float>(); }

  template <typename T>
  void f32_block(std::span<T> out) {
    need(out.size() * sizeof(float));
    if constexpr (std::is_same_v<T, float> && std::endian::native == std::endian::little) {
      bytes(out.data(), out.size() * sizeof(float));
    } else {
      for (T& v : out) v = static_cast<T>(f32());
    }
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) {
      throw DataError(what_ + ": truncated at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Writes through a temporary sibling file and renames it into place.
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

}  // namespace cmow::binary
