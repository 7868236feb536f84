#ifndef DOBI_RNG_HPP
#define DOBI_RNG_HPP

#include <cstdint>

namespace dobi {

// PCG XSH-RR 64/32 (O'Neill). 64-bit LCG state, 32-bit output.
// Constants: multiplier 6364136223846793005, increment derived from the
// stream id as (2*stream + 1). Chosen over std:: distributions because the
// byte stream must be identical across platforms and standard-library
// versions; every dataset, test matrix and range-finder draw goes through
// this generator.
class Pcg32 {
 public:
  explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0xda3e39cb94b95bdbULL);

  std::uint32_t next_u32();
  std::uint64_t next_u64();

  // Uniform on [0,1), 53 random mantissa bits.
  double next_double();

  // Standard normal via Box-Muller on explicit uniforms (deterministic).
  double next_gaussian();

 private:
  std::uint64_t state_;
  std::uint64_t inc_;
  double cached_gaussian_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace dobi

#endif
