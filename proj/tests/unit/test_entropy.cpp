#include <cmath>
#include <cstdint>
#include <numeric>

#include "cvc/entropy.hpp"
#include "cvc/ops.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace cvc;

namespace reference {
#include "coding_constants.inc"

// Second, deliberately plain implementation of the integer table procedure
// described in FORMATS.md, used to cross-check the library.
std::int64_t phi_q32(std::int64_t t_q24) {
  const std::int64_t a = t_q24 < 0 ? -t_q24 : t_q24;
  const std::int64_t step = std::int64_t{1} << 18;  // 2^24 / 64
  std::int64_t v;
  if (a / step >= 512) {
    v = static_cast<std::int64_t>(kNormalCdfQ32[512]);
  } else {
    const std::int64_t i = a / step, r = a % step;
    const std::int64_t lo = static_cast<std::int64_t>(kNormalCdfQ32[i]);
    const std::int64_t hi = static_cast<std::int64_t>(kNormalCdfQ32[i + 1]);
    v = lo + (hi - lo) * r / step;
  }
  return t_q24 < 0 ? (std::int64_t{1} << 32) - v : v;
}

std::vector<std::uint32_t> table(std::int32_t mean_q, int k, std::int32_t smin, std::int32_t smax) {
  const std::int64_t n = smax - smin + 1;
  std::vector<std::int64_t> edge_cdf(n + 1);
  edge_cdf[0] = 0;
  edge_cdf[n] = std::int64_t{1} << 32;
  for (std::int64_t i = 1; i < n; ++i) {
    const std::int64_t edge_q8 = (smin + i) * 256 - 128;
    edge_cdf[i] = phi_q32((edge_q8 - mean_q) * static_cast<std::int64_t>(kInvScaleQ16[k]));
  }
  std::vector<std::int64_t> f(n);
  std::int64_t total = 0, best = -1, best_mass = -1;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t mass = edge_cdf[i + 1] - edge_cdf[i];
    f[i] = 1 + static_cast<std::int64_t>((static_cast<unsigned __int128>(mass) * (65536 - n)) >> 32);
    total += f[i];
    if (mass > best_mass) best_mass = mass, best = i;
  }
  f[best] += 65536 - total;
  std::vector<std::uint32_t> cdf(n + 1, 0);
  for (std::int64_t i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + static_cast<std::uint32_t>(f[i]);
  return cdf;
}
}  // namespace reference

namespace {

// Standard error of a Bernoulli(p) frequency estimate over n draws.
double bernoulli_se(double p, double n) { return std::sqrt(p * (1 - p) / n); }

std::vector<QuantizedCdfTable> random_tables(Rng& rng, std::size_t count, const SymbolRange& r) {
  std::vector<QuantizedCdfTable> t;
  for (std::size_t i = 0; i < count; ++i)
    t.push_back(QuantizedCdfTable::gaussian(rng.normal(0.0, 6.0), std::exp(rng.uniform(-2.5, 4.0)), r));
  return t;
}

// Draw a symbol from a table's own distribution.
std::int32_t sample(const QuantizedCdfTable& t, Rng& rng) {
  const auto u = static_cast<std::uint32_t>(rng.below(kCdfTotal));
  auto it = std::upper_bound(t.cdf.begin(), t.cdf.end(), u);
  return t.min_symbol + static_cast<std::int32_t>(it - t.cdf.begin() - 1);
}

}  // namespace

TEST_CASE("quantize_train: noise lies in [-1/2, 1/2) with zero mean") {
  Rng rng(1);
  const std::size_t n = 1'000'000;
  auto v = TensorD::full({n}, 3.25);
  auto q = quantize_train(v, rng);
  double sum = 0, sum2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = q.at(i) - 3.25;
    CHECK_MESSAGE((u >= -0.5 && u < 0.5), "noise out of range: " << u);
    sum += u;
    sum2 += u * u;
    if (!(u >= -0.5 && u < 0.5)) break;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::abs(mean) < 3 * se);
}

TEST_CASE("quantize_train: gradient passes straight through") {
  Rng rng(2);
  auto v = TensorD::from_data({4}, {0.1, -2, 7, 0}, true);
  sum(quantize_train(v, rng)).backward();
  for (double g : v.grad()) CHECK(g == 1.0);
}

TEST_CASE("quantize_infer: half-to-even rounding and clamp counting") {
  const std::vector<float> v = {0.5f, 1.5f, -2.3f, 2.5f, -0.5f, 300.0f, -129.0f, 127.0f};
  auto q = quantize_infer(v, SymbolRange{});
  CHECK(q.values == std::vector<std::int32_t>{0, 2, -2, 2, 0, 127, -128, 127});
  CHECK(q.clamped == 2);
  auto nan = quantize_infer(std::vector<float>{NAN}, SymbolRange{});
  CHECK(nan.clamped == 1);
}

TEST_CASE("bin likelihood: reference values") {
  CHECK(gaussian_bin_likelihood(0, 0, 1) == doctest::Approx(0.382925).epsilon(1e-6));
  CHECK(gaussian_bin_likelihood(3, 3, 1e-6) == doctest::Approx(1.0));
  CHECK(gaussian_bin_likelihood(3, 3.2, 1e-4) == doctest::Approx(1.0));
  // Symmetry in y - mu.
  CHECK(gaussian_bin_likelihood(2, 0.3, 1.7) == doctest::Approx(gaussian_bin_likelihood(-2, -0.3, 1.7)));
}

TEST_CASE("bin likelihood: Monte Carlo agreement") {
  // The binned mass equals P(N(mu, sigma^2) lands in [y - 1/2, y + 1/2)),
  // which is also the density of N + U(-1/2, 1/2) at y.
  const std::size_t n = 1'000'000;
  const double mu = 0.7, sigma = 1.3;
  for (int y : {-1, 0, 1, 3}) {
    CAPTURE(y);
    std::size_t hit = 0;
    Rng draws(static_cast<std::uint64_t>(100 + y));
    for (std::size_t i = 0; i < n; ++i) {
      const double s = draws.normal(mu, sigma);
      hit += (s >= y - 0.5 && s < y + 0.5);
    }
    const double p = gaussian_bin_likelihood(y, mu, sigma);
    CHECK(std::abs(static_cast<double>(hit) / n - p) < 3 * bernoulli_se(p, n));
  }
}

TEST_CASE("bin likelihood: mass over the alphabet is at most one and tends to one") {
  for (double sigma : {0.3, 2.0, 20.0}) {
    double narrow = 0, wide = 0;
    for (int y = -4; y <= 4; ++y) narrow += gaussian_bin_likelihood(y, 0.4, sigma);
    for (int y = -2000; y <= 2000; ++y) wide += gaussian_bin_likelihood(y, 0.4, sigma);
    CHECK(narrow <= 1.0 + 1e-12);
    CHECK(wide == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("rate bits: one bit at p = 1/2 and zero at p = 1") {
  auto half = gaussian_rate_bits(TensorD::scalar(0.0), TensorD::scalar(0.5), TensorD::scalar(1e-6));
  CHECK(half.item() == doctest::Approx(1.0).epsilon(1e-9));
  auto one = gaussian_rate_bits(TensorD::scalar(2.0), TensorD::scalar(2.0), TensorD::scalar(1e-3));
  CHECK(one.item() == doctest::Approx(0.0).epsilon(1e-12));
  // Floored at 2^-16.
  auto tail = gaussian_rate_bits(TensorD::scalar(90.0), TensorD::scalar(0.0), TensorD::scalar(1.0));
  CHECK(tail.item() == doctest::Approx(16.0));
}

TEST_CASE("rate bits: gradient matches finite differences") {
  Rng rng(4);
  auto y = cvc::testing::random_tensor({12}, rng, 2.0);
  auto mu = cvc::testing::random_tensor({12}, rng, 2.0);
  auto s = cvc::testing::random_tensor({12}, rng, 0.3, 1.2);
  auto r = cvc::testing::grad_check(
      [](const std::vector<TensorD>& in) { return gaussian_rate_bits(in[0], in[1], in[2]); },
      {y, mu, s});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("factorized prior: positive scale, per-channel broadcast, gradient") {
  ParamStore<double> ps;
  auto prior = FactorizedPrior::create(ps, "prior", 3, 2.0);
  auto s = prior.scale(ps.view(), 2, 2);
  CHECK(s.shape() == Shape{3, 2, 2});
  for (double v : s.data()) CHECK(v == doctest::Approx(2.0));
  ps[prior.raw_scale].mutable_data()[1] = -60.0;
  CHECK(prior.scale(ps.view(), 1, 1).at(1) > 0.0);

  Rng rng(5);
  auto z = cvc::testing::random_tensor({3, 2, 2}, rng, 2.0);
  auto r = cvc::testing::grad_check(
      [&](const std::vector<TensorD>& in) {
        std::vector<TensorD> p{in[0], in[1]};
        return gaussian_rate_bits(z, prior.location(ParamSet<double>(p), 2, 2),
                                  prior.scale(ParamSet<double>(p), 2, 2));
      },
      {ps[prior.loc], TensorD::from_data({3}, {0.2, 0.9, -0.4})});
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("quantized tables: invariants over many parameters and alphabets") {
  Rng rng(6);
  for (auto range : {SymbolRange{}, SymbolRange{-2, 2}, SymbolRange{0, 1}, SymbolRange{-1000, 1000}}) {
    for (int i = 0; i < 300; ++i) {
      const double mu = rng.normal(0.0, 40.0), sigma = std::exp(rng.uniform(-6.0, 7.0));
      auto t = QuantizedCdfTable::gaussian(mu, sigma, range);
      CHECK_NOTHROW(t.validate());
      CHECK(t.symbols() == range.size());
      CHECK(t.cdf.back() == kCdfTotal);
    }
  }
  CHECK_THROWS_AS(QuantizedCdfTable::gaussian(0, 1, SymbolRange{0, 40000}), ConfigError);
  CHECK_THROWS_AS(QuantizedCdfTable::gaussian(0, 1, SymbolRange{3, 2}), ConfigError);
}

TEST_CASE("quantized tables: parameter snapping grids") {
  const SymbolRange r{};
  CHECK(snap_params(0.5, 1.0, r).mean_q == 128);
  CHECK(snap_params(-1.0 / 512, 1.0, r).mean_q == 0);  // half-even on the 1/256 grid
  CHECK(snap_params(1e9, 1.0, r).mean_q == (127 + 32) * 256);
  CHECK(snap_params(0.0, 1e-9, r).scale_index == 0);
  CHECK(snap_params(0.0, 1e9, r).scale_index == 63);
  CHECK(scale_level(0) == doctest::Approx(0.11));
  CHECK(scale_level(63) == doctest::Approx(64.0));
  for (std::uint8_t k = 0; k < 64; ++k) CHECK(snap_params(0.0, scale_level(k), r).scale_index == k);
}

TEST_CASE("quantized tables: constants agree with the C library") {
  for (std::size_t i = 0; i < reference::kCdfSamples; ++i) {
    const long double x = static_cast<long double>(i) / 64.0L;
    const long double phi = 0.5L * std::erfc(-x / std::sqrt(2.0L));
    const long double q = std::nearbyint(std::ldexp(phi, 32));
    CHECK(std::abs(q - static_cast<long double>(reference::kNormalCdfQ32[i])) <= 1.0L);
  }
  for (std::size_t k = 0; k < reference::kScaleLevels; ++k) {
    const double level = 0.11 * std::pow(64.0 / 0.11, static_cast<double>(k) / 63.0);
    CHECK(reference::kScaleLevel[k] == doctest::Approx(level).epsilon(1e-12));
    CHECK(reference::kInvScaleQ16[k] == static_cast<std::uint32_t>(std::lround(65536.0 / level)));
  }
}

TEST_CASE("quantized tables: two independent implementations agree bit for bit") {
  Rng rng(7);
  for (auto range : {SymbolRange{}, SymbolRange{-3, 5}}) {
    for (int i = 0; i < 2000; ++i) {
      CodingParams p;
      p.mean_q = static_cast<std::int32_t>(rng.below(2 * 256 * 200)) - 256 * 200;
      p.scale_index = static_cast<std::uint8_t>(rng.below(64));
      auto lib = QuantizedCdfTable::from_params(p, range);
      auto ref = reference::table(p.mean_q, p.scale_index, range.min, range.max);
      REQUIRE_MESSAGE(lib.cdf == ref, "mean_q=" << p.mean_q << " k=" << int(p.scale_index));
    }
  }
}

TEST_CASE("quantized tables: rate tracks the continuous likelihood") {
  // With a moderate scale the 16-bit table costs within a small margin of the
  // exact binned Gaussian for likely symbols.
  const SymbolRange r{};
  auto t = QuantizedCdfTable::gaussian(0.0, 3.0, r);
  const double sigma = scale_level(snap_params(0.0, 3.0, r).scale_index);
  for (int y = -6; y <= 6; ++y)
    CHECK(std::abs(t.bits(y) + std::log2(gaussian_bin_likelihood(y, 0.0, sigma))) < 0.01);
}

TEST_CASE("range coder: empty stream") {
  auto bytes = range_encode({}, [](std::size_t) -> const QuantizedCdfTable& { throw 0; });
  CHECK(bytes.size() <= 8);
  CHECK(range_decode(bytes, 0, [](std::size_t) -> const QuantizedCdfTable& { throw 0; }).empty());
}

TEST_CASE("range coder: 1000 uniform binary symbols take 125 bytes plus a constant") {
  QuantizedCdfTable coin{0, {0, kCdfTotal / 2, kCdfTotal}};
  Rng rng(8);
  std::vector<std::int32_t> s(1000);
  for (auto& v : s) v = static_cast<std::int32_t>(rng.below(2));
  auto table_for = [&](std::size_t) -> const QuantizedCdfTable& { return coin; };
  auto bytes = range_encode(s, table_for);
  CHECK(bytes.size() >= 125);
  CHECK(bytes.size() <= 125 + 8);
  CHECK(range_decode(bytes, s.size(), table_for) == s);
}

TEST_CASE("range coder: 10^5 symbol roundtrip and rate within coder overhead") {
  Rng rng(9);
  const SymbolRange range{};
  auto tables = random_tables(rng, 257, range);
  const std::size_t n = 100'000;
  std::vector<std::size_t> which(n);
  std::vector<std::int32_t> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    which[i] = rng.below(tables.size());
    s[i] = sample(tables[which[i]], rng);
  }
  auto table_for = [&](std::size_t i) -> const QuantizedCdfTable& { return tables[which[i]]; };
  auto bytes = range_encode(s, table_for);
  CHECK(range_decode(bytes, n, table_for) == s);

  const double est = table_bits(s, table_for);
  const double realized = 8.0 * static_cast<double>(bytes.size());
  CHECK(realized <= est + 32.0);
  CHECK(realized >= est - 1.0);
}

TEST_CASE("range coder: long runs of near-certain symbols exercise carry propagation") {
  const SymbolRange range{-2, 2};
  std::vector<QuantizedCdfTable> t = {QuantizedCdfTable::gaussian(2.0, 0.11, range),
                                      QuantizedCdfTable::gaussian(-2.0, 0.11, range),
                                      QuantizedCdfTable::gaussian(0.0, 64.0, range)};
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(5000);
    std::vector<std::int32_t> s(n);
    std::vector<std::size_t> which(n);
    const std::size_t mode = rng.below(3);
    for (std::size_t i = 0; i < n; ++i) {
      which[i] = rng.uniform() < 0.02 ? rng.below(3) : mode;
      s[i] = rng.uniform() < 0.001 ? static_cast<std::int32_t>(rng.below(5)) - 2
                                   : sample(t[which[i]], rng);
    }
    auto table_for = [&](std::size_t i) -> const QuantizedCdfTable& { return t[which[i]]; };
    auto bytes = range_encode(s, table_for);
    REQUIRE(range_decode(bytes, n, table_for) == s);
    const double est = table_bits(s, table_for);
    CHECK(8.0 * bytes.size() <= est + 32.0);
    CHECK(8.0 * bytes.size() >= est - 1.0);
  }
}

TEST_CASE("range coder: out-of-alphabet symbol is an error") {
  auto t = QuantizedCdfTable::gaussian(0, 1, SymbolRange{-2, 2});
  std::vector<std::int32_t> s = {0, 1, 3};
  CHECK_THROWS_AS(range_encode(s, [&](std::size_t) -> const QuantizedCdfTable& { return t; }),
                  DataError);
}

TEST_CASE("range coder: truncation and trailing bytes are detected with an offset") {
  Rng rng(11);
  auto tables = random_tables(rng, 16, SymbolRange{});
  std::vector<std::int32_t> s(4000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = sample(tables[i % 16], rng);
  auto table_for = [&](std::size_t i) -> const QuantizedCdfTable& { return tables[i % 16]; };
  auto bytes = range_encode(s, table_for);

  auto cut = std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 10);
  CHECK_THROWS_AS(range_decode(cut, s.size(), table_for), DecodeError);
  auto extra = bytes;
  extra.push_back(0);
  CHECK_THROWS_AS(range_decode(extra, s.size(), table_for), DecodeError);
  try {
    range_decode(cut, s.size(), table_for);
  } catch (const DecodeError& e) {
    CHECK(e.offset() <= cut.size());
    CHECK(std::string(e.what()).find("at byte") != std::string::npos);
  }
}

TEST_CASE("range coder: single-byte corruption never decodes silently to the original") {
  Rng rng(12);
  auto tables = random_tables(rng, 16, SymbolRange{});
  std::vector<std::int32_t> s(2000);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = sample(tables[i % 16], rng);
  auto table_for = [&](std::size_t i) -> const QuantizedCdfTable& { return tables[i % 16]; };
  auto bytes = range_encode(s, table_for);
  std::size_t errors = 0, mismatches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto bad = bytes;
    bad[rng.below(bad.size())] ^= static_cast<std::uint8_t>(1 + rng.below(255));
    try {
      if (range_decode(bad, s.size(), table_for) != s) ++mismatches;
    } catch (const DecodeError&) {
      ++errors;
    }
  }
  // Undetected changes are caught by the container checksum.
  CHECK(errors + mismatches == 200);
}

TEST_CASE("range coder: output is deterministic") {
  Rng r1(13), r2(13);
  auto t1 = random_tables(r1, 8, SymbolRange{});
  auto t2 = random_tables(r2, 8, SymbolRange{});
  std::vector<std::int32_t> s(500);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = sample(t1[i % 8], r1);
  auto a = range_encode(s, [&](std::size_t i) -> const QuantizedCdfTable& { return t1[i % 8]; });
  auto b = range_encode(s, [&](std::size_t i) -> const QuantizedCdfTable& { return t2[i % 8]; });
  CHECK(a == b);
}

TEST_CASE("rate bits: unfloored evaluation stays finite and differentiable in the far tail") {
  auto y = TensorD::from_data({3}, {40.0, -300.0, 0.2});
  auto mu = TensorD::from_data({3}, {0.0, 0.0, 0.0});
  auto s = TensorD::from_data({3}, {1.0, 2.0, 1.0});
  auto bits = gaussian_rate_bits(y, mu, s, 0.0);
  CHECK(std::isfinite(bits.item()));
  // -log2 Q(39.5) alone is about 1135 bits.
  CHECK(bits.item() > 1000.0);
  auto r = cvc::testing::grad_check(
      [](const std::vector<TensorD>& in) { return gaussian_rate_bits(in[0], in[1], in[2], 0.0); },
      {y, mu, s}, 1e-6);
  CHECK(r.max_rel_error < 1e-4);
  // Near the mode the floored and unfloored forms coincide.
  auto a = gaussian_rate_bits(TensorD::scalar(1.0), TensorD::scalar(0.3), TensorD::scalar(0.8));
  auto b = gaussian_rate_bits(TensorD::scalar(1.0), TensorD::scalar(0.3), TensorD::scalar(0.8), 0.0);
  CHECK(a.item() == doctest::Approx(b.item()).epsilon(1e-12));
}
