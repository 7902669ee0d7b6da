#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace mmpivot {

inline uint32_t load_u32le(const unsigned char* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

inline void store_u32le(uint32_t v, unsigned char* p) {
  p[0] = v & 0xff;
  p[1] = (v >> 8) & 0xff;
  p[2] = (v >> 16) & 0xff;
  p[3] = (v >> 24) & 0xff;
}

inline float load_f32le(const unsigned char* p) {
  const uint32_t u = load_u32le(p);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

inline void store_f32le(float f, unsigned char* p) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  store_u32le(u, p);
}

inline std::vector<unsigned char> read_all_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_invalid("cannot open ", path);
  return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
}

inline void write_all_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_invalid("cannot write ", path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out.flush()) fail_runtime("write failed for ", path);
}

}  // namespace mmpivot
