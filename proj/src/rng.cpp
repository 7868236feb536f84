#include "dobi/rng.hpp"

#include <cmath>

namespace dobi {

namespace {
constexpr std::uint64_t kMult = 6364136223846793005ULL;

std::uint32_t rotr32(std::uint32_t x, unsigned r) {
  return (x >> r) | (x << ((-r) & 31u));
}
}  // namespace

Pcg32::Pcg32(std::uint64_t seed, std::uint64_t stream) {
  inc_ = (stream << 1u) | 1u;
  state_ = 0u;
  state_ = state_ * kMult + inc_;
  state_ += seed;
  state_ = state_ * kMult + inc_;
}

std::uint32_t Pcg32::next_u32() {
  const std::uint64_t old = state_;
  state_ = old * kMult + inc_;
  const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const auto rot = static_cast<unsigned>(old >> 59u);
  return rotr32(xorshifted, rot);
}

std::uint64_t Pcg32::next_u64() {
  const std::uint64_t hi = next_u32();
  const std::uint64_t lo = next_u32();
  return (hi << 32) | lo;
}

double Pcg32::next_double() {
  // 53 significant bits -> uniform on [0,1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Pcg32::next_gaussian() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_gaussian_;
  }
  // u1 in (0,1] so the log is finite.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 6.283185307179586476925286766559 * u2;
  cached_gaussian_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

}  // namespace dobi
