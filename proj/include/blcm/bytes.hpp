#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "blcm/error.hpp"

namespace blcm {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline std::string to_hex(ByteView data) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0x0f]);
  }
  return out;
}

namespace detail {
inline int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}
}  // namespace detail

/// Accepts an optional "0x" prefix.
inline Bytes from_hex(std::string_view hex) {
  if (hex.starts_with("0x") || hex.starts_with("0X")) hex.remove_prefix(2);
  if (hex.size() % 2 != 0) throw Error(ErrorCode::Malformed, "odd-length hex string");
  Bytes out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    int hi = detail::hex_value(hex[2 * i]);
    int lo = detail::hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::Malformed, "invalid hex digit");
    out[i] = static_cast<std::uint8_t>((hi << 4) | lo);
  }
  return out;
}

/// Fixed-width byte string. The Tag parameter keeps addresses, digests and
/// nonces from being mixed up even when their widths agree.
template <std::size_t N, typename Tag>
class FixedBytes {
 public:
  static constexpr std::size_t size_bytes = N;

  constexpr FixedBytes() = default;
  explicit FixedBytes(const std::array<std::uint8_t, N>& raw) : data_(raw) {}

  static FixedBytes from_span(ByteView raw) {
    if (raw.size() != N)
      throw Error(ErrorCode::Malformed,
                  "expected " + std::to_string(N) + " bytes, got " + std::to_string(raw.size()));
    FixedBytes out;
    std::copy(raw.begin(), raw.end(), out.data_.begin());
    return out;
  }

  static FixedBytes from_hex(std::string_view hex) { return from_span(blcm::from_hex(hex)); }

  const std::array<std::uint8_t, N>& raw() const noexcept { return data_; }
  std::array<std::uint8_t, N>& raw() noexcept { return data_; }
  ByteView view() const noexcept { return {data_.data(), N}; }
  std::string hex() const { return to_hex(view()); }

  bool is_zero() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](auto b) { return b == 0; });
  }

  auto operator<=>(const FixedBytes&) const = default;

 private:
  std::array<std::uint8_t, N> data_{};
};

struct AddressTag {};
struct DigestTag {};
struct NonceTag {};

/// 20-byte account identifier, rendered as 0x-prefixed lowercase hex.
class Address : public FixedBytes<20, AddressTag> {
 public:
  using FixedBytes::FixedBytes;
  Address() = default;
  Address(const FixedBytes& b) : FixedBytes(b) {}  // NOLINT
  std::string str() const { return "0x" + hex(); }
  static Address parse(std::string_view s) { return FixedBytes::from_hex(s); }
};

using Digest = FixedBytes<32, DigestTag>;
using Nonce = FixedBytes<16, NonceTag>;

struct FixedBytesHash {
  template <std::size_t N, typename Tag>
  std::size_t operator()(const FixedBytes<N, Tag>& b) const noexcept {
    std::size_t h = 0;
    std::memcpy(&h, b.raw().data(), std::min(sizeof(h), N));
    return h;
  }
};

}  // namespace blcm
