#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "bandlift/error.hpp"

namespace bandlift::detail {

class ByteWriter {
 public:
  template <class T>
  void put(T value) {
    unsigned char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    bytes_.insert(bytes_.end(), raw, raw + sizeof(T));
  }

  void put_tag(const char (&tag)[5]) { bytes_.insert(bytes_.end(), tag, tag + 4); }

  template <class T>
  void put_all(std::span<const T> values) {
    for (const T& v : values) put(v);
  }

  void pad_to(std::size_t offset) {
    if (bytes_.size() < offset) bytes_.resize(offset, 0);
  }

  std::size_t size() const noexcept { return bytes_.size(); }
  const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const unsigned char> bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    require(pos_ + sizeof(T) <= bytes_.size(), ErrorCode::CheckpointMismatch, "truncated file");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  bool tag_is(const char (&tag)[5]) {
    if (pos_ + 4 > bytes_.size() || std::memcmp(bytes_.data() + pos_, tag, 4) != 0) return false;
    pos_ += 4;
    return true;
  }

  template <class T>
  std::vector<T> get_all(std::size_t count) {
    require(pos_ + count * sizeof(T) <= bytes_.size(), ErrorCode::CheckpointMismatch, "truncated file");
    std::vector<T> out(count);
    std::memcpy(out.data(), bytes_.data() + pos_, count * sizeof(T));
    pos_ += count * sizeof(T);
    return out;
  }

  void seek(std::size_t offset) {
    require(offset <= bytes_.size(), ErrorCode::CheckpointMismatch, "truncated file");
    pos_ = offset;
  }
  std::size_t position() const noexcept { return pos_; }
  bool at_end() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace bandlift::detail
