#pragma once

#include <openssl/sha.h>

#include <array>
#include <compare>
#include <cstring>
#include <functional>
#include <string>

#include "qsc/bytes.hpp"

namespace qsc {

// 256-bit SHA-256 output. The all-zero value is reserved for genesis.
struct Digest {
  std::array<std::uint8_t, 32> bytes{};

  static Digest zero() { return {}; }

  static Digest of(ByteSpan data) {
    Digest d;
    SHA256(data.data(), data.size(), d.bytes.data());
    return d;
  }

  bool is_zero() const { return *this == Digest{}; }
  std::string hex() const { return to_hex(bytes); }
  std::string short_hex() const { return hex().substr(0, 12); }

  friend auto operator<=>(const Digest&, const Digest&) = default;
  friend bool operator==(const Digest&, const Digest&) = default;
};

struct DigestHash {
  std::size_t operator()(const Digest& d) const noexcept {
    std::size_t h;
    std::memcpy(&h, d.bytes.data(), sizeof h);
    return h;
  }
};

}  // namespace qsc
