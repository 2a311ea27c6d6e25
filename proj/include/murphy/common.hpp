#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace murphy {

// Error taxonomy shared by all modules. DSL execution failures are NOT
// exceptions -- they are ordinary feedback values (see toy_env.hpp).

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 64-bit FNV-1a. std::hash is not stable across standard libraries; every
// hash that feeds a context bucket or a config fingerprint goes through this.
class Fnv64 {
 public:
  static constexpr std::uint64_t kOffset = 14695981039346656037ULL;
  static constexpr std::uint64_t kPrime = 1099511628211ULL;

  Fnv64& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= kPrime;
    }
    return *this;
  }
  Fnv64& str(std::string_view s) { return bytes(s.data(), s.size()); }
  Fnv64& u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    return bytes(b, 8);
  }
  Fnv64& i64(std::int64_t v) { return u64(static_cast<std::uint64_t>(v)); }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = kOffset;
};

// Portable uniform double in [0, 1) from a 64-bit generator. The standard
// distributions are implementation-defined, so sampling goes through this.
template <typename Rng>
double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace murphy
