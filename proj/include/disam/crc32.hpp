#pragma once

#include <cstddef>
#include <cstdint>

namespace disam {

// Plain CRC-32 (zlib polynomial); used for checkpoint and feature-db
// integrity checks and model fingerprints.
class Crc32 {
 public:
  void update(const void* data, size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i)
      state_ = table()[(state_ ^ p[i]) & 0xFFu] ^ (state_ >> 8);
  }

  uint32_t value() const { return state_ ^ 0xFFFFFFFFu; }

 private:
  static const uint32_t* table() {
    static uint32_t t[256];
    static bool ready = [] {
      for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int b = 0; b < 8; ++b) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        t[i] = c;
      }
      return true;
    }();
    (void)ready;
    return t;
  }

  uint32_t state_ = 0xFFFFFFFFu;
};

}  // namespace disam
