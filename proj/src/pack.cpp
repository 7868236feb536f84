#include "dobi/pack.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "dobi/kernels.hpp"

namespace dobi {

QuantBlock quantize_block(std::span<const double> v) {
  QuantBlock q;
  q.codes.resize(v.size(), 0);
  double absmax = 0.0;
  for (double x : v) {
    if (!std::isfinite(x)) throw numeric_error("quantize_block: non-finite input");
    absmax = std::max(absmax, std::abs(x));
  }
  if (absmax == 0.0) {
    q.scale = 0.0f;
    return q;
  }
  q.scale = static_cast<float>(absmax / 127.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const long c = std::lround(v[i] / static_cast<double>(q.scale));
    q.codes[i] = static_cast<std::int8_t>(std::clamp<long>(c, -127, 127));
  }
  return q;
}

std::uint16_t float_to_half(float f) {
  std::uint32_t x;
  std::memcpy(&x, &f, sizeof(x));
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  const std::int32_t exp = static_cast<std::int32_t>((x >> 23) & 0xFF) - 127 + 15;
  std::uint32_t mant = x & 0x7FFFFFu;

  if (((x >> 23) & 0xFF) == 0xFF) {  // inf/nan
    return static_cast<std::uint16_t>(sign | 0x7C00u | (mant ? 0x200u : 0u));
  }
  if (exp >= 31) {  // overflow -> inf
    return static_cast<std::uint16_t>(sign | 0x7C00u);
  }
  if (exp <= 0) {  // subnormal or zero
    if (exp < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x800000u;
    const int shift = 14 - exp;
    std::uint32_t half_mant = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half_mant & 1u))) ++half_mant;
    return static_cast<std::uint16_t>(sign | half_mant);
  }
  std::uint32_t half = sign | (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;  // may carry into exp; still valid
  return static_cast<std::uint16_t>(half);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t x;
  if (exp == 0) {
    if (mant == 0) {
      x = sign;
    } else {
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      mant &= 0x3FFu;
      x = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | (mant << 13);
    }
  } else if (exp == 0x1F) {
    x = sign | 0x7F800000u | (mant << 13);
  } else {
    x = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &x, sizeof(f));
  return f;
}

namespace {

std::uint16_t pair_cell(std::int8_t u_code, std::int8_t v_code) {
  return static_cast<std::uint16_t>((static_cast<std::uint16_t>(static_cast<std::uint8_t>(u_code)) << 8) |
                                    static_cast<std::uint16_t>(static_cast<std::uint8_t>(v_code)));
}

std::int8_t cell_high(std::uint16_t cell) { return static_cast<std::int8_t>(cell >> 8); }
std::int8_t cell_low(std::uint16_t cell) { return static_cast<std::int8_t>(cell & 0xFFu); }

}  // namespace

namespace {

PackedWeight pack_panels(const DenseMatrix& uk, const DenseMatrix& vk, index m, index n, index k) {
  PackedWeight p;
  p.m = m;
  p.n = n;
  p.k = k;
  p.layout_tag = (m >= n) ? 0 : 1;
  p.slots.assign(static_cast<std::size_t>(std::max(m, n) * k), 0);
  p.u_scales.assign(static_cast<std::size_t>(k), 0.0f);
  p.v_scales.assign(static_cast<std::size_t>(k), 0.0f);
  if (k == 0) return p;

  const index overlap = std::min(m, n);
  const DenseMatrix& tall = (m >= n) ? uk : vk;

  for (index j = 0; j < k; ++j) {
    std::vector<double> ucol(static_cast<std::size_t>(overlap)), vcol(static_cast<std::size_t>(overlap));
    for (index i = 0; i < overlap; ++i) {
      ucol[static_cast<std::size_t>(i)] = uk(i, j);
      vcol[static_cast<std::size_t>(i)] = vk(i, j);
    }
    const QuantBlock qu = quantize_block(ucol);
    const QuantBlock qv = quantize_block(vcol);
    p.u_scales[static_cast<std::size_t>(j)] = qu.scale;
    p.v_scales[static_cast<std::size_t>(j)] = qv.scale;
    for (index i = 0; i < overlap; ++i)
      p.slots[static_cast<std::size_t>(i * k + j)] =
          pair_cell(qu.codes[static_cast<std::size_t>(i)], qv.codes[static_cast<std::size_t>(i)]);
  }
  for (index i = overlap; i < std::max(m, n); ++i)
    for (index j = 0; j < k; ++j)
      p.slots[static_cast<std::size_t>(i * k + j)] = float_to_half(static_cast<float>(tall(i, j)));
  return p;
}

}  // namespace

PackedWeight pack(const UpdatedWeight& w) {
  require_finite(w.w_tilde, "pack");
  const index m = w.w_tilde.rows(), n = w.w_tilde.cols();
  const index k = w.k;
  if (k < 0 || k > std::min(m, n)) throw value_error("pack: rank out of range");
  if (k == 0) return pack_panels(DenseMatrix(m, 0), DenseMatrix(n, 0), m, n, 0);

  const SvdFactors f = svd_full(w.w_tilde);
  if (!f.u.all_finite()) throw numeric_error("pack: non-finite factors");

  // Ũ_k = (UΣ)[:, :k] (m×k), V_k = V[:, :k] (n×k).
  DenseMatrix uk(m, k), vk(n, k);
  for (index i = 0; i < m; ++i)
    for (index j = 0; j < k; ++j) uk(i, j) = f.u(i, j) * f.s[static_cast<std::size_t>(j)];
  for (index i = 0; i < n; ++i)
    for (index j = 0; j < k; ++j) vk(i, j) = f.vt(j, i);
  return pack_panels(uk, vk, m, n, k);
}

PackedWeight pack_factors(const DenseMatrix& w1, const DenseMatrix& w2) {
  require_finite(w1, "pack_factors");
  require_finite(w2, "pack_factors");
  if (w1.cols() != w2.rows()) throw shape_error("pack_factors: inner rank mismatch");
  const index m = w1.rows(), n = w2.cols(), k = w1.cols();
  if (k > std::min(m, n)) throw value_error("pack_factors: rank exceeds min(m,n)");
  return pack_panels(w1, transpose(w2), m, n, k);
}

std::pair<DenseMatrix, DenseMatrix> unpack(const PackedWeight& p) {
  if (p.layout_tag != 0 && p.layout_tag != 1)
    throw io_error(io_error::kind::corrupt, "unpack: invalid layout tag");
  if ((p.layout_tag == 0) != (p.m >= p.n))
    throw io_error(io_error::kind::corrupt, "unpack: layout tag contradicts dimensions");
  if (static_cast<index>(p.slots.size()) != std::max(p.m, p.n) * p.k)
    throw io_error(io_error::kind::corrupt, "unpack: slot count mismatch");
  if (static_cast<index>(p.u_scales.size()) != p.k || static_cast<index>(p.v_scales.size()) != p.k)
    throw io_error(io_error::kind::corrupt, "unpack: scale table mismatch");

  const index m = p.m, n = p.n, k = p.k;
  DenseMatrix w1(m, k), w2(k, n);
  const index overlap = std::min(m, n);
  for (index i = 0; i < overlap; ++i) {
    for (index j = 0; j < k; ++j) {
      const std::uint16_t cell = p.slots[static_cast<std::size_t>(i * k + j)];
      w1(i, j) = static_cast<double>(cell_high(cell)) * static_cast<double>(p.u_scales[static_cast<std::size_t>(j)]);
      w2(j, i) = static_cast<double>(cell_low(cell)) * static_cast<double>(p.v_scales[static_cast<std::size_t>(j)]);
    }
  }
  for (index i = overlap; i < std::max(m, n); ++i) {
    for (index j = 0; j < k; ++j) {
      const double v = static_cast<double>(half_to_float(p.slots[static_cast<std::size_t>(i * k + j)]));
      if (p.layout_tag == 0)
        w1(i, j) = v;  // tail rows of Ũ_k
      else
        w2(j, i) = v;  // tail rows of V_k, transposed into w2
    }
  }
  return {std::move(w1), std::move(w2)};
}

double packed_ratio(const PackedWeight& p) {
  return ratio_remapped(p.m, p.n, static_cast<double>(p.k));
}

QuantErrorReport quant_error_report(const UpdatedWeight& w) {
  const PackedWeight p = pack(w);
  const auto [w1, w2] = unpack(p);
  const DenseMatrix approx = matmul(w1, w2);
  QuantErrorReport rep;
  double se = 0.0, ae = 0.0;
  for (index i = 0; i < approx.size(); ++i) {
    const double d = approx.data()[static_cast<std::size_t>(i)] -
                     w.w_tilde.data()[static_cast<std::size_t>(i)];
    se += d * d;
    ae += std::abs(d);
  }
  rep.mse = se / static_cast<double>(approx.size());
  rep.mae = ae / static_cast<double>(approx.size());
  return rep;
}

}  // namespace dobi
