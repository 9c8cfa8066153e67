#pragma once

// Quantization, the binned-Gaussian likelihood, integer CDF tables and the
// range coder that forms the lossless layer of the codec.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cvc/nn.hpp"
#include "cvc/rng.hpp"
#include "cvc/tensor.hpp"

namespace cvc {

struct SymbolRange {
  std::int32_t min = -128;
  std::int32_t max = 127;
  std::size_t size() const { return static_cast<std::size_t>(max - min + 1); }
  void validate() const;
};

// ---------------------------------------------------------------------------
// Quantization

// Training proxy: v + u with u ~ U(-1/2, 1/2) per element. The gradient with
// respect to v is the identity.
template <class T>
BasicTensor<T> quantize_train(const BasicTensor<T>& v, Rng& rng);

struct Quantized {
  std::vector<std::int32_t> values;
  std::size_t clamped = 0;  // elements that fell outside the alphabet
};

// Round half to even, then clamp into `range`, counting clamps.
Quantized quantize_infer(std::span<const float> v, const SymbolRange& range);

// ---------------------------------------------------------------------------
// Likelihood

double standard_normal_cdf(double x);

// P(N(mu, sigma^2) + U(-1/2, 1/2) lands in the bin of y), i.e.
// Phi((y + 1/2 - mu) / sigma) - Phi((y - 1/2 - mu) / sigma). Not floored.
double gaussian_bin_likelihood(double y, double mu, double sigma);

// Probability floor applied before taking -log2 for rates.
inline constexpr double kLikelihoodFloor = 1.0 / 65536.0;

// Sum over elements of -log2(max(p, floor)) with p the binned Gaussian
// likelihood of `values` under N(mu, sigma). Differentiable in all three
// inputs (zero gradient where the floor is active). floor = 0 disables the
// floor; p is then evaluated in log space so far-tail values still get a
// useful gradient.
template <class T>
BasicTensor<T> gaussian_rate_bits(const BasicTensor<T>& values, const BasicTensor<T>& mu,
                                  const BasicTensor<T>& sigma, double floor = kLikelihoodFloor);

// Per-channel Gaussian prior for the hyper-latent, with learned location and
// scale (scale = softplus(raw) + 1e-6).
struct FactorizedPrior {
  std::size_t loc = 0, raw_scale = 0;
  std::size_t channels = 0;

  template <class T>
  static FactorizedPrior create(ParamStore<T>& ps, const std::string& name, std::size_t channels,
                                double init_scale = 1.0);

  // Expands per-channel parameters to a [C, H, W] grid.
  template <class T>
  BasicTensor<T> location(ParamSet<T> p, std::size_t height, std::size_t width) const;
  template <class T>
  BasicTensor<T> scale(ParamSet<T> p, std::size_t height, std::size_t width) const;
};

// ---------------------------------------------------------------------------
// Quantized CDF tables

inline constexpr int kCdfPrecision = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecision;

// Coding parameters after snapping to the shared grids: mean in units of
// 1/256, scale as an index into the 64-level log grid.
struct CodingParams {
  std::int32_t mean_q = 0;
  std::uint8_t scale_index = 0;
  bool operator==(const CodingParams&) const = default;
};

CodingParams snap_params(double mu, double sigma, const SymbolRange& range);
double scale_level(std::uint8_t index);

// Cumulative frequencies over [range.min, range.max]; cdf[i] is the start of
// symbol range.min + i and cdf.back() == kCdfTotal. Every symbol has
// frequency >= 1.
struct QuantizedCdfTable {
  std::int32_t min_symbol = 0;
  std::vector<std::uint32_t> cdf;

  // Integer-only construction; see FORMATS.md for the exact procedure.
  static QuantizedCdfTable from_params(const CodingParams& p, const SymbolRange& range);
  static QuantizedCdfTable gaussian(double mu, double sigma, const SymbolRange& range) {
    return from_params(snap_params(mu, sigma, range), range);
  }

  std::size_t symbols() const { return cdf.size() - 1; }
  bool contains(std::int32_t s) const {
    return s >= min_symbol && s < min_symbol + static_cast<std::int32_t>(symbols());
  }
  std::uint32_t start(std::int32_t s) const { return cdf[s - min_symbol]; }
  std::uint32_t freq(std::int32_t s) const { return cdf[s - min_symbol + 1] - cdf[s - min_symbol]; }
  double bits(std::int32_t s) const;
  // Throws unless counts are strictly increasing and end at kCdfTotal.
  void validate() const;
};

// Returns the table for the i-th symbol of a stream.
using TableFor = std::function<const QuantizedCdfTable&(std::size_t)>;

// Sum of -log2(freq / 2^16) over the stream: the rate the coder should hit.
double table_bits(std::span<const std::int32_t> symbols, const TableFor& table_for);

// ---------------------------------------------------------------------------
// Range coder
//
// Carry-propagating range coder with a 48-bit low register, 48-bit range
// kept >= 2^40, and 16-bit frequencies. Bytes past the end of a stream read
// as zero.

class RangeEncoder {
 public:
  void encode(std::uint32_t start, std::uint32_t freq);
  std::vector<std::uint8_t> finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint64_t range_ = (1ull << 48) - 1;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 0;  // 0xFF bytes waiting on a possible carry
  bool first_ = true;
  std::vector<std::uint8_t> out_;
};

class RangeDecoder {
 public:
  explicit RangeDecoder(std::span<const std::uint8_t> bytes);
  // Value in [0, 2^16) locating the next symbol.
  std::uint32_t target();
  void consume(std::uint32_t start, std::uint32_t freq);
  std::int32_t decode(const QuantizedCdfTable& table);
  // Throws DecodeError unless exactly the whole stream was used.
  void finish() const;
  std::size_t position() const { return pos_; }

 private:
  std::uint8_t next_byte();

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  std::uint64_t code_ = 0;
  std::uint64_t range_ = (1ull << 48) - 1;
  std::uint64_t step_ = 0;
};

// Throws DataError if a symbol lies outside its table's alphabet.
std::vector<std::uint8_t> range_encode(std::span<const std::int32_t> symbols,
                                       const TableFor& table_for);
std::vector<std::int32_t> range_decode(std::span<const std::uint8_t> bytes, std::size_t count,
                                       const TableFor& table_for);

}  // namespace cvc
