#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tsm/errors.hpp"

namespace tsm {

// Fixed-size bitset sized at runtime. Word order is little-endian
// (bit i lives in word i/64).
class DynamicBitset {
 public:
  DynamicBitset() = default;
  explicit DynamicBitset(std::size_t n) : n_(n), words_((n + 63) / 64, 0) {}

  std::size_t size() const { return n_; }

  bool test(std::size_t i) const {
    check(i);
    return (words_[i >> 6] >> (i & 63)) & 1;
  }

  void set(std::size_t i) {
    check(i);
    words_[i >> 6] |= std::uint64_t{1} << (i & 63);
  }

  void reset(std::size_t i) {
    check(i);
    words_[i >> 6] &= ~(std::uint64_t{1} << (i & 63));
  }

  void clear() { std::fill(words_.begin(), words_.end(), 0); }

  std::size_t count() const {
    std::size_t c = 0;
    for (std::uint64_t w : words_) c += static_cast<std::size_t>(std::popcount(w));
    return c;
  }

  bool all() const { return count() == n_; }
  bool none() const {
    for (std::uint64_t w : words_)
      if (w) return false;
    return true;
  }

  DynamicBitset& operator|=(const DynamicBitset& o) {
    for (std::size_t i = 0; i < words_.size(); ++i) words_[i] |= o.words_[i];
    return *this;
  }

  friend bool operator==(const DynamicBitset& a, const DynamicBitset& b) {
    return a.n_ == b.n_ && a.words_ == b.words_;
  }

  std::vector<std::size_t> to_indices() const {
    std::vector<std::size_t> out;
    out.reserve(count());
    for (std::size_t i = 0; i < n_; ++i)
      if (test(i)) out.push_back(i);
    return out;
  }

  const std::vector<std::uint64_t>& words() const { return words_; }

 private:
  void check(std::size_t i) const {
    if (i >= n_) throw ContractViolation("bitset index out of range");
  }

  std::size_t n_ = 0;
  std::vector<std::uint64_t> words_;
};

}  // namespace tsm
