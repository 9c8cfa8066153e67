#pragma once

// Gridded fields on disk, per-channel normalization statistics, and the
// synthetic dataset generator.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cvc/tensor.hpp"

namespace cvc {

// One instance (timestamp) of a C x H x W field, channel-major, row-major.
// Latitudes are in degrees and strictly decreasing (north first).
struct GridField {
  std::vector<std::string> names;
  std::vector<float> lat, lon;
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<float> values;

  std::size_t size() const { return channels * height * width; }
  float at(std::size_t c, std::size_t h, std::size_t w) const {
    return values[(c * height + h) * width + w];
  }
  // Throws DataError on inconsistent dimensions or non-decreasing latitudes.
  void validate() const;
  bool same_grid(const GridField& other) const;
};

std::vector<std::uint8_t> serialize_grid(const GridField& g);
GridField parse_grid(std::span<const std::uint8_t> bytes);
void save_grid(const std::filesystem::path& path, const GridField& g);
GridField load_grid(const std::filesystem::path& path);

// Sorted *.grd files in a directory.
std::vector<std::filesystem::path> list_grids(const std::filesystem::path& dir);
std::vector<GridField> load_grids(const std::filesystem::path& dir);

struct NormStats {
  std::vector<std::string> names;
  std::vector<double> mean, stddev;

  std::size_t channels() const { return mean.size(); }
  // Hash of the canonical text form.
  std::uint64_t hash() const;
  std::string to_text() const;
  static NormStats from_text(const std::string& text);
};

// Streaming (Chan et al. pairwise merge of per-instance moments).
NormStats compute_stats(const std::vector<GridField>& split);
// Reference two-pass computation; agrees with compute_stats to rounding.
NormStats compute_stats_two_pass(const std::vector<GridField>& split);
void save_stats(const std::filesystem::path& path, const NormStats& s);
NormStats load_stats(const std::filesystem::path& path);

// (x - mean) / std per channel, as a [C,H,W] tensor.
Tensor normalize(const GridField& g, const NormStats& s);
// Inverse of normalize, written into a copy of `like` (names and coordinates).
GridField denormalize(const Tensor& x, const NormStats& s, const GridField& like);

struct SyntheticSpec {
  std::uint64_t seed = 1;
  std::size_t channels = 8, height = 32, width = 64;
  // Power spectrum ~ (k^2 + k0^2)^(-slope / 2) per channel; larger is smoother.
  std::vector<double> slopes;
  // Amplitude of the cos(latitude) mean profile, in units of the noise std.
  double lat_amplitude = 24.0;
  // Noise std grows from 1 - storm_track at the poles and equator to
  // 1 + storm_track at 45 degrees; 0 gives a uniform std.
  double storm_track = 0.0;
  // Lower-triangular mixing of independent noise fields into channels.
  // Empty means a default coupling with nearest-channel correlation 0.6.
  std::vector<double> coupling;
  double anomaly_rate = 2.0;   // expected anomalies per instance and channel
  double anomaly_scale = 2.5;  // median anomaly amplitude, heavy-tailed
  std::size_t train = 256, val = 32, test = 32;

  void validate() const;
};

enum class Split : std::uint64_t { train = 1, val = 2, test = 3 };

// Deterministic per (spec, split, index); splits draw from disjoint seed streams.
GridField generate_instance(const SyntheticSpec& spec, Split split, std::size_t index);
// Writes <dir>/{train,val,test}/NNNNN.grd.
void generate_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir);

// Latitudes of cell centres from +90 to -90, longitudes from 0.
std::vector<float> default_latitudes(std::size_t height);
std::vector<float> default_longitudes(std::size_t width);

}  // namespace cvc
