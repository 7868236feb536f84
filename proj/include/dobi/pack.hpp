#ifndef DOBI_PACK_HPP
#define DOBI_PACK_HPP

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dobi/weight_update.hpp"

namespace dobi {

// Symmetric absmax int8 quantizer output for one column.
// codes ∈ [-127, 127]; scale = absmax/127; zero input -> scale 0, codes 0.
struct QuantBlock {
  std::vector<std::int8_t> codes;
  float scale = 0.0f;
};

QuantBlock quantize_block(std::span<const double> v);

// IEEE 754 binary16 conversions (round to nearest even). Tail rows of the
// taller factor are stored in this format.
std::uint16_t float_to_half(float f);
float half_to_float(std::uint16_t h);

// Mixed-precision container for one rank-k weight: exactly k·max(m,n)
// 16-bit slots. The first min(m,n) rows hold byte pairs
// (high byte U-code, low byte V-code); the remaining rows hold raw
// binary16 values of the taller factor. layout_tag: 0 -> m >= n,
// 1 -> m < n. Per-column f32 scales live beside the slots; they are
// documented overhead, not slot-law storage.
struct PackedWeight {
  index m = 0;
  index n = 0;
  index k = 0;
  std::uint8_t layout_tag = 0;
  std::vector<std::uint16_t> slots;  // row-major max(m,n)×k
  std::vector<float> u_scales;       // k
  std::vector<float> v_scales;       // k
};

// Factor W̃ = U Σ Vᵀ, keep Ũ_k = (UΣ)[:, :k] and V_k = V[:, :k], quantize
// the overlapping min(m,n) rows of both per column, pair the codes into
// 16-bit cells, and append the taller factor's remaining rows as raw
// binary16.
PackedWeight pack(const UpdatedWeight& w);

// Pack an explicit factor pair without refactoring. Quantization is a
// projection, so pack_factors(unpack(p)) reproduces p's slots bit for
// bit; pack() itself re-runs the SVD and cannot promise that.
PackedWeight pack_factors(const DenseMatrix& w1, const DenseMatrix& w2);

// Reconstruct the factored pair (w1 ≈ Ũ_k m×k, w2 ≈ V_kᵀ k×n).
// Throws io_error on bad layout_tag, slot-count or scale-table mismatch.
std::pair<DenseMatrix, DenseMatrix> unpack(const PackedWeight& p);

// k·max(m,n)/(m·n) — identical to rank_learn's remapped counting.
double packed_ratio(const PackedWeight& p);

struct QuantErrorReport {
  double mse = 0.0;
  double mae = 0.0;
};

// Error of the full pack/unpack round trip against W̃.
QuantErrorReport quant_error_report(const UpdatedWeight& w);

}  // namespace dobi

#endif
