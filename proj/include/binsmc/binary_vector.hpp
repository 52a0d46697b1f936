#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace binsmc {

/// A point of {0,1}^d, one byte per component.
class BinaryVector {
 public:
  BinaryVector() = default;
  explicit BinaryVector(std::size_t d) : bits_(d, 0) {}
  BinaryVector(std::initializer_list<int> bits) {
    bits_.reserve(bits.size());
    for (int b : bits) bits_.push_back(b != 0 ? 1 : 0);
  }

  /// Component i is bit i of `code` (component 0 is the least significant bit).
  static BinaryVector from_code(std::uint64_t code, std::size_t d) {
    BinaryVector v(d);
    for (std::size_t i = 0; i < d; ++i) v.bits_[i] = static_cast<std::uint8_t>((code >> i) & 1U);
    return v;
  }

  std::uint64_t code() const {
    if (bits_.size() > 64) throw std::length_error("BinaryVector::code: dimension exceeds 64");
    std::uint64_t c = 0;
    for (std::size_t i = 0; i < bits_.size(); ++i) c |= static_cast<std::uint64_t>(bits_[i]) << i;
    return c;
  }

  std::size_t size() const noexcept { return bits_.size(); }
  bool operator[](std::size_t i) const noexcept { return bits_[i] != 0; }
  void set(std::size_t i, bool value) noexcept { bits_[i] = value ? 1 : 0; }
  void flip(std::size_t i) noexcept { bits_[i] ^= 1U; }

  std::size_t count() const noexcept {
    std::size_t c = 0;
    for (auto b : bits_) c += b;
    return c;
  }

  /// Indices of the components equal to one, in increasing order.
  std::vector<std::size_t> ones() const {
    std::vector<std::size_t> idx;
    idx.reserve(bits_.size());
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) idx.push_back(i);
    return idx;
  }

  std::span<const std::uint8_t> bytes() const noexcept { return bits_; }

  std::string to_string() const {
    std::string s(bits_.size(), '0');
    for (std::size_t i = 0; i < bits_.size(); ++i)
      if (bits_[i]) s[i] = '1';
    return s;
  }

  friend bool operator==(const BinaryVector&, const BinaryVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

struct BinaryVectorHash {
  std::size_t operator()(const BinaryVector& v) const noexcept {
    std::uint64_t h = 0x51a3f0c7e2d94b1dULL ^ v.size();
    std::uint64_t word = 0;
    std::size_t k = 0;
    for (auto b : v.bytes()) {
      word = (word << 1) | b;
      if (++k == 64) {
        h = mix64(h ^ word);
        word = 0;
        k = 0;
      }
    }
    return static_cast<std::size_t>(mix64(h ^ word ^ (static_cast<std::uint64_t>(k) << 56)));
  }
};

}  // namespace binsmc
