#pragma once

#include <cstdint>
#include <vector>

#include "nmsparse/serialize.hpp"

// Byte-oriented range coder: 32-bit range, 64-bit low with carry counting.
// Specialized for static models with small alphabets (frequencies sum to
// `total`, each symbol gets cumulative range [cum, cum+freq)). The encoder
// emits a leading zero byte that the decoder discards; flush costs five
// bytes per stream.
namespace nmsparse {

class RangeEncoder {
 public:
  explicit RangeEncoder(std::vector<std::uint8_t>& out) : out_(out) {}

  void encode(std::uint32_t cum, std::uint32_t freq, std::uint32_t total) {
    range_ /= total;
    low_ += static_cast<std::uint64_t>(cum) * range_;
    range_ *= freq;
    while (range_ < kTop) {
      range_ <<= 8;
      shift_low();
    }
  }

  void finish() {
    for (int i = 0; i < 5; ++i) shift_low();
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  void shift_low() {
    if (static_cast<std::uint32_t>(low_ >> 32) != 0 ||
        static_cast<std::uint32_t>(low_) < 0xFF000000u) {
      const std::uint8_t carry = static_cast<std::uint8_t>(low_ >> 32);
      out_.push_back(static_cast<std::uint8_t>(cache_ + carry));
      for (; pending_ > 0; --pending_) out_.push_back(static_cast<std::uint8_t>(0xFF + carry));
      cache_ = static_cast<std::uint8_t>(low_ >> 24);
    } else {
      ++pending_;
    }
    low_ = (low_ << 8) & 0xFFFFFFFFull;
  }

  std::vector<std::uint8_t>& out_;
  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 0;
};

class RangeDecoder {
 public:
  RangeDecoder(const std::uint8_t* data, std::size_t size) : p_(data), n_(size) {
    next_byte();  // encoder's leading cache byte
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
  }

  // Returns the symbol's position in [0, total) assuming unit frequencies.
  std::uint32_t decode_uniform(std::uint32_t total) {
    range_ /= total;
    std::uint32_t sym = code_ / range_;
    if (sym >= total) throw FormatError("corrupt range-coded payload", pos_);
    code_ -= sym * range_;
    while (range_ < kTop) {
      code_ = (code_ << 8) | next_byte();
      range_ <<= 8;
    }
    return sym;
  }

 private:
  static constexpr std::uint32_t kTop = 1u << 24;

  std::uint8_t next_byte() {
    if (pos_ >= n_) throw FormatError("range-coded payload truncated", pos_);
    return p_[pos_++];
  }

  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint32_t code_ = 0;
};

}  // namespace nmsparse
