#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace dmlg {

inline constexpr const char* kVersion = "0.1.0";

// FNV-1a, used to fingerprint resolved configurations and datasets so output
// artifacts can be matched to the exact run that produced them.
class Fnv1a {
 public:
  Fnv1a& update(const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash_ ^= bytes[i];
      hash_ *= 0x100000001B3ULL;
    }
    return *this;
  }

  Fnv1a& update(const std::string& s) { return update(s.data(), s.size()); }

  std::uint64_t value() const { return hash_; }

  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    std::uint64_t h = hash_;
    for (int i = 15; i >= 0; --i) {
      out[static_cast<std::size_t>(i)] = digits[h & 0xF];
      h >>= 4;
    }
    return out;
  }

 private:
  std::uint64_t hash_ = 0xCBF29CE484222325ULL;
};

}  // namespace dmlg
