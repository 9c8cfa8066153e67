#include <fftw3.h>

#include <cmath>
#include <complex>
#include <cstdio>
#include <memory>
#include <mutex>
#include <numbers>

#include "cvc/data.hpp"
#include "cvc/rng.hpp"

namespace cvc {
namespace {

struct ChannelStyle {
  const char* name;
  double offset, unit;  // unit: physical size of one anomaly standard deviation
  double profile_sign;  // +1 where the field peaks at the equator
};

// Physical-looking offsets and units so normalization has real work to do.
constexpr ChannelStyle kStyles[] = {
    {"z500", 5600.0, 60.0, 1.0},    {"t850", 275.0, 3.0, 1.0},   {"u10", 0.0, 1.2, -1.0},
    {"v10", 0.0, 1.2, 1.0},         {"t2m", 282.0, 4.0, 1.0},    {"msl", 101300.0, 250.0, -1.0},
    {"q700", 0.005, 0.0004, 1.0},   {"tcwv", 30.0, 2.5, 1.0},
};

// FFTW planning is not thread-safe.
std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

// Unit-variance field on an (2H) x W periodic domain with power spectrum
// (k^2 + k0^2)^(-slope/2); the caller keeps the top H rows so the output is
// not periodic in latitude.
std::vector<double> spectral_noise(Rng& rng, std::size_t h2, std::size_t w, double slope) {
  const std::size_t wc = w / 2 + 1;
  std::vector<double> field(h2 * w);
  for (auto& v : field) v = rng.normal();

  auto* spec = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * h2 * wc));
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> guard(spec, &fftw_free);
  fftw_plan fwd, inv;
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fwd = fftw_plan_dft_r2c_2d(static_cast<int>(h2), static_cast<int>(w), field.data(), spec,
                               FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_2d(static_cast<int>(h2), static_cast<int>(w), spec, field.data(),
                               FFTW_ESTIMATE);
  }
  fftw_execute(fwd);
  constexpr double k0 = 1.0;
  for (std::size_t i = 0; i < h2; ++i) {
    const double ky = static_cast<double>(std::min(i, h2 - i)) * static_cast<double>(w) /
                      static_cast<double>(h2);
    for (std::size_t j = 0; j < wc; ++j) {
      const double kx = static_cast<double>(j);
      const double amp = std::pow(kx * kx + ky * ky + k0 * k0, -slope / 4.0);
      spec[i * wc + j][0] *= amp;
      spec[i * wc + j][1] *= amp;
    }
  }
  spec[0][0] = spec[0][1] = 0.0;  // zero mean
  fftw_execute(inv);
  {
    std::lock_guard<std::mutex> lock(fftw_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  double sum2 = 0.0, sum = 0.0;
  for (double v : field) {
    sum += v;
    sum2 += v * v;
  }
  const double n = static_cast<double>(field.size());
  const double sd = std::sqrt(std::max(sum2 / n - (sum / n) * (sum / n), 1e-300));
  for (auto& v : field) v = (v - sum / n) / sd;
  return field;
}

std::vector<double> default_coupling(std::size_t c) {
  constexpr double rho = 0.6;
  const double rest = std::sqrt(1.0 - rho * rho);
  // Row k of L is rho * row (k-1) + rest * e_k.
  std::vector<double> l(c * c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    if (k > 0)
      for (std::size_t j = 0; j < k; ++j) l[k * c + j] = rho * l[(k - 1) * c + j];
    l[k * c + k] = k == 0 ? 1.0 : rest;
  }
  return l;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (channels == 0) throw ConfigError("synthetic: need at least one channel");
  if (height < 4 || width < 8) throw ConfigError("synthetic: grid must be at least 4x8");
  if (!slopes.empty() && slopes.size() != channels)
    throw ConfigError("synthetic: need one spectral slope per channel");
  if (!coupling.empty() && coupling.size() != channels * channels)
    throw ConfigError("synthetic: coupling matrix must be channels x channels");
  for (std::size_t i = 0; i < coupling.size(); ++i)
    if (i % channels > i / channels && coupling[i] != 0.0)
      throw ConfigError("synthetic: coupling matrix must be lower triangular");
  if (storm_track < 0 || storm_track >= 1) throw ConfigError("synthetic: storm_track must be in [0, 1)");
  if (anomaly_rate < 0 || anomaly_scale < 0) throw ConfigError("synthetic: negative anomaly setting");
}

GridField generate_instance(const SyntheticSpec& spec, Split split, std::size_t index) {
  spec.validate();
  const std::size_t c_n = spec.channels, h = spec.height, w = spec.width, hw = h * w;
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(split), index));

  GridField g;
  g.channels = c_n;
  g.height = h;
  g.width = w;
  g.lat = default_latitudes(h);
  g.lon = default_longitudes(w);
  for (std::size_t c = 0; c < c_n; ++c) {
    char buf[32];
    if (c < std::size(kStyles)) std::snprintf(buf, sizeof buf, "%s", kStyles[c].name);
    else std::snprintf(buf, sizeof buf, "ch%zu", c);
    g.names.emplace_back(buf);
  }

  // Independent spectrally shaped fields, then coupled across channels.
  std::vector<std::vector<double>> noise(c_n);
  for (std::size_t c = 0; c < c_n; ++c) {
    const double slope = spec.slopes.empty() ? 5.0 + 0.5 * static_cast<double>(c % 4) : spec.slopes[c];
    auto f = spectral_noise(rng, 2 * h, w, slope);
    f.resize(hw);
    noise[c] = std::move(f);
  }
  const auto l = spec.coupling.empty() ? default_coupling(c_n) : spec.coupling;

  // A per-instance shift of the latitude profile, like a seasonal cycle.
  const double shift = 12.0 * std::sin(2.0 * std::numbers::pi * rng.uniform());
  const double modulation = 1.0 + 0.15 * (2.0 * rng.uniform() - 1.0);

  g.values.assign(c_n * hw, 0.0f);
  std::vector<double> field(hw);
  for (std::size_t c = 0; c < c_n; ++c) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j <= c; ++j) norm2 += l[c * c_n + j] * l[c * c_n + j];
    const double inv = norm2 > 0 ? 1.0 / std::sqrt(norm2) : 0.0;
    std::fill(field.begin(), field.end(), 0.0);
    for (std::size_t j = 0; j <= c; ++j) {
      const double k = l[c * c_n + j] * inv;
      if (k != 0.0)
        for (std::size_t i = 0; i < hw; ++i) field[i] += k * noise[j][i];
    }

    if (spec.storm_track > 0)
      for (std::size_t y = 0; y < h; ++y) {
        const double s = std::sin(2.0 * g.lat[y] * std::numbers::pi / 180.0);
        const double env = 1.0 + spec.storm_track * (2.0 * s * s - 1.0);
        for (std::size_t x = 0; x < w; ++x) field[y * w + x] *= env;
      }

    const auto style = c < std::size(kStyles) ? kStyles[c] : ChannelStyle{"", 0.0, 1.0, 1.0};
    const double amp = spec.lat_amplitude * modulation * (1.0 + 0.25 * static_cast<double>(c % 3)) *
                       style.profile_sign;
    for (std::size_t y = 0; y < h; ++y) {
      const double lat = (g.lat[y] + shift) * std::numbers::pi / 180.0;
      // cos(lat) averages 2/pi over equally spaced rows, so the offset stays the mean.
      const double profile = amp * (std::cos(lat) - 2.0 / std::numbers::pi);
      for (std::size_t x = 0; x < w; ++x) field[y * w + x] += profile;
    }

    // Sparse localized extremes with Pareto-tailed amplitudes, mostly positive.
    const double expected = spec.anomaly_rate;
    std::size_t count = 0;
    for (double t = -std::log(1.0 - rng.uniform()); t < expected; t += -std::log(1.0 - rng.uniform()))
      ++count;
    for (std::size_t a = 0; a < count; ++a) {
      const double cy = rng.uniform() * static_cast<double>(h);
      const double cx = rng.uniform() * static_cast<double>(w);
      const double radius = 1.0 + 2.0 * rng.uniform();
      const double sign = rng.uniform() < 0.75 ? 1.0 : -1.0;
      const double amplitude = sign * spec.anomaly_scale * std::pow(1.0 - rng.uniform(), -1.0 / 3.0) * 0.8;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) + 0.5 - cy;
          double dx = std::abs(static_cast<double>(x) + 0.5 - cx);
          dx = std::min(dx, static_cast<double>(w) - dx);
          const double r2 = (dx * dx + dy * dy) / (radius * radius);
          if (r2 < 16.0) field[y * w + x] += amplitude * std::exp(-0.5 * r2);
        }
    }

    for (std::size_t i = 0; i < hw; ++i)
      g.values[c * hw + i] = static_cast<float>(style.offset + style.unit * field[i]);
  }
  return g;
}

void generate_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  const std::pair<const char*, std::pair<Split, std::size_t>> splits[] = {
      {"train", {Split::train, spec.train}},
      {"val", {Split::val, spec.val}},
      {"test", {Split::test, spec.test}}};
  for (const auto& [name, info] : splits) {
    const auto sub = dir / name;
    std::filesystem::create_directories(sub);
    for (std::size_t i = 0; i < info.second; ++i) {
      char file[32];
      std::snprintf(file, sizeof file, "%05zu.grd", i);
      save_grid(sub / file, generate_instance(spec, info.first, i));
    }
  }
}

}  // namespace cvc
