#ifndef MOCO_RNG_HPP
#define MOCO_RNG_HPP

#include <cstdint>
#include <random>
#include <string>

namespace moco {

// All randomness flows from one master seed. Named streams split the seed
// deterministically so modules cannot perturb each other's draws.
inline std::mt19937_64 seeded_stream(uint64_t seed, const std::string& stream) {
  uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32),
                    static_cast<uint32_t>(h), static_cast<uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace moco

#endif
