#include "vqa/common.hpp"

#include <malloc.h>

namespace vqa {

std::uint64_t fnv1a(std::span<const std::byte> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::byte b : bytes) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string shape_string(long rows, long cols) {
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc maximum on 64-bit
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
}

}  // namespace vqa
