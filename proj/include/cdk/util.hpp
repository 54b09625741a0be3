#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace cdk {

// CRC-32 (IEEE 802.3), used for checkpoint tensor checksums.
uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

// FNV-1a, used to derive deterministic seeds from strings.
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Worker count for data-parallel loops; CDK_THREADS caps it.
int worker_count();

// Runs fn(i) for i in [0, n) over worker_count() threads. Callers must
// write only to disjoint output slots so results are order-independent.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace cdk
