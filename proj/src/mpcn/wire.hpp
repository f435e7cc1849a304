#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "mpcn/error.hpp"

// Little-endian binary encoding helpers shared by the snapshot and
// checkpoint formats.
namespace mpcn::wire {

inline void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}

inline void put_u32(std::string& out, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  put_bytes(out, b, 4);
}

inline void put_u64(std::string& out, uint64_t v) {
  put_u32(out, static_cast<uint32_t>(v));
  put_u32(out, static_cast<uint32_t>(v >> 32));
}

inline void put_i64(std::string& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }
inline void put_i32(std::string& out, int32_t v) { put_u32(out, static_cast<uint32_t>(v)); }

inline void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

inline void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  put_bytes(out, s.data(), s.size());
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}

  void need(size_t n) const {
    if (pos + n > buf.size()) throw DataError("binary payload truncated");
  }
  uint8_t get_u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  uint32_t get_u32() {
    need(4);
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
    pos += 4;
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
  }
  uint64_t get_u64() {
    uint64_t lo = get_u32();
    uint64_t hi = get_u32();
    return lo | (hi << 32);
  }
  int64_t get_i64() { return static_cast<int64_t>(get_u64()); }
  int32_t get_i32() { return static_cast<int32_t>(get_u32()); }
  double get_f64() {
    uint64_t bits = get_u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float get_f32() {
    uint32_t bits = get_u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string get_str() {
    uint32_t n = get_u32();
    need(n);
    std::string s(buf.data() + pos, n);
    pos += n;
    return s;
  }
};

}  // namespace mpcn::wire
