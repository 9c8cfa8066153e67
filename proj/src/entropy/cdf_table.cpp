#include <algorithm>
#include <cmath>
#include <cstdint>

#include "cvc/entropy.hpp"

namespace cvc {
namespace {

#include "coding_constants.inc"

constexpr std::int64_t kMeanUnit = 256;  // mean grid is 1/256
constexpr std::uint64_t kOneQ32 = 1ull << 32;

// Phi(t) in Q32 for t = d / 256 * inv_scale_q16 / 65536, i.e. t_q24 = d * inv.
std::uint64_t normal_cdf_q32(std::int64_t t_q24) {
  const bool negative = t_q24 < 0;
  const std::uint64_t a = static_cast<std::uint64_t>(negative ? -t_q24 : t_q24);
  constexpr int shift = 24 - kCdfStepLog2;
  const std::uint64_t idx = a >> shift;
  std::uint64_t phi;
  if (idx >= kCdfSamples - 1) {
    phi = kNormalCdfQ32[kCdfSamples - 1];
  } else {
    const std::uint64_t frac = a & ((1ull << shift) - 1);
    const std::uint64_t lo = kNormalCdfQ32[idx], hi = kNormalCdfQ32[idx + 1];
    phi = lo + (((hi - lo) * frac) >> shift);
  }
  return negative ? kOneQ32 - phi : phi;
}

}  // namespace

void SymbolRange::validate() const {
  if (max < min) throw ConfigError("symbol range is empty");
  if (size() > kCdfTotal / 2)
    throw ConfigError("symbol alphabet of " + std::to_string(size()) + " symbols is too large");
}

CodingParams snap_params(double mu, double sigma, const SymbolRange& range) {
  CodingParams p;
  if (!std::isfinite(mu)) mu = 0.0;
  // Means far outside the alphabet code identically to the boundary.
  const double lo = range.min - 32.0, hi = range.max + 32.0;
  mu = std::clamp(mu, lo, hi);
  p.mean_q = static_cast<std::int32_t>(std::nearbyint(mu * kMeanUnit));
  std::uint8_t k = 0;
  if (std::isfinite(sigma)) {
    while (k < kScaleLevels - 1 && sigma > kScaleUpper[k]) ++k;
  } else {
    k = kScaleLevels - 1;
  }
  p.scale_index = k;
  return p;
}

double scale_level(std::uint8_t index) {
  return kScaleLevel[std::min<std::size_t>(index, kScaleLevels - 1)];
}

QuantizedCdfTable QuantizedCdfTable::from_params(const CodingParams& p, const SymbolRange& range) {
  range.validate();
  if (p.scale_index >= kScaleLevels) throw ConfigError("scale index out of range");
  const std::size_t n = range.size();
  const std::int64_t inv = kInvScaleQ16[p.scale_index];

  // Q32 mass of each symbol bin; the outermost bins absorb the tails so the
  // masses sum to exactly 2^32.
  std::vector<std::uint64_t> mass(n);
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t upper = kOneQ32;
    if (i + 1 < n) {
      const std::int64_t edge = (static_cast<std::int64_t>(range.min) + static_cast<std::int64_t>(i)) *
                                    kMeanUnit + kMeanUnit / 2;
      upper = normal_cdf_q32((edge - p.mean_q) * inv);
    }
    mass[i] = upper - prev;
    prev = upper;
  }

  // One guaranteed count per symbol, the rest distributed by floor, and the
  // leftover to the most probable symbol (lowest index on ties).
  const std::uint64_t spread = kCdfTotal - n;
  std::vector<std::uint32_t> freq(n);
  std::uint64_t used = 0;
  std::size_t top = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t f = (mass[i] * spread) >> 32;
    freq[i] = static_cast<std::uint32_t>(1 + f);
    used += f;
    if (mass[i] > mass[top]) top = i;
  }
  freq[top] += static_cast<std::uint32_t>(spread - used);

  QuantizedCdfTable t;
  t.min_symbol = range.min;
  t.cdf.resize(n + 1);
  t.cdf[0] = 0;
  for (std::size_t i = 0; i < n; ++i) t.cdf[i + 1] = t.cdf[i] + freq[i];
  return t;
}

double QuantizedCdfTable::bits(std::int32_t s) const {
  return -std::log2(static_cast<double>(freq(s)) / kCdfTotal);
}

void QuantizedCdfTable::validate() const {
  if (cdf.size() < 2 || cdf.front() != 0 || cdf.back() != kCdfTotal)
    throw DataError("cdf table must start at 0 and end at 2^16");
  for (std::size_t i = 1; i < cdf.size(); ++i)
    if (cdf[i] <= cdf[i - 1]) throw DataError("cdf table is not strictly increasing");
}

double table_bits(std::span<const std::int32_t> symbols, const TableFor& table_for) {
  double bits = 0;
  for (std::size_t i = 0; i < symbols.size(); ++i) bits += table_for(i).bits(symbols[i]);
  return bits;
}

}  // namespace cvc
