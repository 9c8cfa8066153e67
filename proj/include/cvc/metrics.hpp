#pragma once

// Reconstruction quality and compression-size metrics.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvc/data.hpp"

namespace cvc {

// Row weights H * cos(lat_h) / sum_h' cos(lat_h'); they average to one.
std::vector<double> latitude_weights(std::span<const float> lat_deg);

// Latitude-weighted RMSE of channel `c`, averaged over instances (pairs of
// reference and reconstruction on the same grid).
double weighted_rmse(std::span<const GridField> x, std::span<const GridField> x_hat, std::size_t c);
double weighted_rmse(const GridField& x, const GridField& x_hat, std::size_t c);

// Mean squared error in normalized space over every channel and grid point, times 100.
double overall_mse(std::span<const GridField> x, std::span<const GridField> x_hat,
                   const NormStats& stats);

struct SizeMetrics {
  double bpsp = 0;   // bits per sub-pixel
  double ratio = 0;  // source bytes / compressed bytes
};
SizeMetrics bpsp_and_ratio(std::uint64_t compressed_bytes, std::uint64_t values,
                           unsigned source_bits = 32);

// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

inline constexpr double kSediQuantiles[] = {0.90, 0.95, 0.98, 0.995};
inline constexpr double kRqeQuantiles[] = {0.90, 0.95, 0.98, 0.99, 0.995, 0.999};

enum class ExtremeSide { above, below };

struct SediResult {
  double value = 0;
  double hit_rate = 0, false_alarm_rate = 0;
  bool degenerate = false;  // a rate hit 0 or 1 and was clamped
};

// Symmetric Extremal Dependence Index of the extreme masks of x_hat against x.
// For `above`, extremes exceed the q-quantile of x; for `below`, they fall
// under its (1 - q)-quantile. Rates are clamped to [1e-9, 1 - 1e-9].
SediResult sedi(std::span<const double> x, std::span<const double> x_hat, double q,
                ExtremeSide side = ExtremeSide::above);

// Relative quantile error over kRqeQuantiles, clipped to [-1, 1]. Negative
// when x_hat underestimates the upper tail.
double rqe(std::span<const double> x, std::span<const double> x_hat);

// Channel `c` of every instance, concatenated.
std::vector<double> pooled_channel(std::span<const GridField> fields, std::size_t c);

struct EvalReport {
  std::vector<std::string> channels;
  std::vector<double> weighted_rmse;
  double overall_mse = 0;
  double ratio = 0, bpsp = 0;
  std::uint64_t compressed_bytes = 0, values = 0;
  std::vector<std::vector<SediResult>> sedi;  // [channel][kSediQuantiles index]
  std::vector<double> rqe;
  double encode_seconds = 0, decode_seconds = 0;
  std::uint64_t clamped = 0;

  std::string to_json() const;
  // Fixed-width text table, one row per channel.
  std::string to_table() const;
};

// Everything except sizes, timings and clamp counts, which the caller fills in.
EvalReport evaluate(std::span<const GridField> x, std::span<const GridField> x_hat,
                    const NormStats& stats);

}  // namespace cvc
