#pragma once

#include <cstdint>
#include <cstring>
#include <string>

namespace hte {

// FNV-1a, 64-bit. Used for content hashes of parameters, centroids and
// canonicalized spec files; not cryptographic.
class Fnv1a {
 public:
  void update(const void* bytes, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }

  void update(const std::string& s) { update(s.data(), s.size()); }

  void update(double v) { update(&v, sizeof(v)); }

  template <typename Int>
  void update_int(Int v) {
    update(&v, sizeof(v));
  }

  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(const std::string& s) {
  Fnv1a h;
  h.update(s);
  return h.digest();
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace hte
