#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace ctrkd {

// 64-bit FNV-1a.
class Fnv1a {
 public:
  void update(std::span<const unsigned char> bytes) {
    for (unsigned char b : bytes) {
      state_ ^= b;
      state_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view text) {
    update(std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.digest();
}

}  // namespace ctrkd
