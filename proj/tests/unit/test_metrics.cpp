#include <cmath>

#include "cvc/metrics.hpp"
#include "cvc/rng.hpp"
#include "doctest.h"
#include "support/metric_oracles.hpp"

using namespace cvc;

namespace {

GridField grid(std::size_t c, std::size_t h, std::size_t w, Rng& rng, double scale = 1.0) {
  GridField g;
  g.channels = c;
  g.height = h;
  g.width = w;
  for (std::size_t k = 0; k < c; ++k) g.names.push_back("v" + std::to_string(k));
  g.lat = default_latitudes(h);
  g.lon = default_longitudes(w);
  for (std::size_t i = 0; i < g.size(); ++i) g.values.push_back(static_cast<float>(scale * rng.normal()));
  return g;
}

GridField perturbed(const GridField& g, Rng& rng, double s) {
  auto out = g;
  for (auto& v : out.values) v += static_cast<float>(s * rng.normal());
  return out;
}

std::vector<std::vector<float>> raw(const std::vector<GridField>& v) {
  std::vector<std::vector<float>> out;
  for (const auto& g : v) out.push_back(g.values);
  return out;
}

}  // namespace

TEST_CASE("latitude weights average to one and reduce to plain RMSE on equal latitudes") {
  const auto w = latitude_weights(default_latitudes(8));
  double s = 0;
  for (double v : w) s += v;
  CHECK(s == doctest::Approx(8.0));
  Rng rng(1);
  auto x = grid(1, 4, 8, rng), y = perturbed(x, rng, 0.5);
  x.lat = y.lat = {10.0f, 9.99999f, 9.99998f, 9.99997f};
  double plain = 0;
  for (std::size_t i = 0; i < x.size(); ++i) plain += std::pow(double(x.values[i]) - y.values[i], 2);
  CHECK(weighted_rmse(x, y, 0) == doctest::Approx(std::sqrt(plain / x.size())).epsilon(1e-6));
}

TEST_CASE("constant error returns its magnitude exactly on any latitude grid") {
  Rng rng(2);
  for (std::size_t h : {3, 8, 16}) {
    auto x = grid(2, h, 8, rng);
    auto y = x;
    for (auto& v : y.values) v += 2.0f;
    // Float addition can perturb the difference by an ulp; the metric itself is exact.
    for (std::size_t i = 0; i < x.size(); ++i) x.values[i] = y.values[i] - 2.0f;
    CHECK(weighted_rmse(x, y, 1) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(weighted_rmse(x, x, 0) == 0.0);
  }
}

TEST_CASE("metrics agree with brute-force oracles") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = 2 + rng.below(7), w = 2 + rng.below(15);
    std::vector<GridField> x, y;
    for (int i = 0; i < 3; ++i) {
      x.push_back(grid(2, h, w, rng, 3.0));
      y.push_back(perturbed(x.back(), rng, 0.7));
    }
    const auto stats = compute_stats(x);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(std::abs(weighted_rmse(x, y, c) - oracle::weighted_rmse(raw(x), raw(y), x[0].lat, 2, c, w)) < 1e-9);
      const auto a = pooled_channel(x, c), b = pooled_channel(y, c);
      for (double q : kSediQuantiles) CHECK(std::abs(sedi(a, b, q).value - oracle::sedi(a, b, q)) < 1e-9);
      CHECK(std::abs(rqe(a, b) - oracle::rqe(a, b)) < 1e-9);
    }
    CHECK(std::abs(overall_mse(x, y, stats) - oracle::overall_mse_x100(raw(x), raw(y), stats.stddev, h * w)) < 1e-9);
  }
}

TEST_CASE("overall MSE examples") {
  Rng rng(4);
  std::vector<GridField> x{grid(2, 4, 8, rng), grid(2, 4, 8, rng)};
  const auto stats = compute_stats(x);
  CHECK(overall_mse(x, x, stats) == 0.0);
  auto y = x;
  for (auto& g : y)
    for (std::size_t i = 0; i < g.size(); ++i) g.values[i] += static_cast<float>(stats.stddev[i / 32]);
  CHECK(overall_mse(x, y, stats) == doctest::Approx(100.0).epsilon(1e-5));
}

TEST_CASE("bits per sub-pixel and compression ratio") {
  auto one = bpsp_and_ratio(1000, 1000, 32);
  CHECK(one.bpsp == 8.0);
  CHECK(one.ratio == 4.0);
  for (std::uint64_t bytes : {17ull, 300ull, 123457ull}) {
    const auto m = bpsp_and_ratio(bytes, 16384, 32);
    CHECK(m.bpsp * m.ratio == doctest::Approx(32.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(bpsp_and_ratio(10, 0), DataError);
}

TEST_CASE("quantile interpolates between order statistics") {
  CHECK(quantile({3, 1, 2, 4}, 0.5) == 2.5);
  CHECK(quantile({5}, 0.9) == 5);
  CHECK(quantile({0, 10}, 0.95) == doctest::Approx(9.5));
  CHECK(quantile({1, 2, 3}, 1.0) == 3);
}

TEST_CASE("SEDI limits") {
  Rng rng(5);
  std::vector<double> x(20000), y(20000);
  for (auto& v : x) v = rng.normal();
  for (double q : kSediQuantiles) {
    const auto same = sedi(x, x, q);
    CHECK(same.value == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(same.degenerate);
  }
  // Independent field at the same base rate: no dependence.
  for (auto& v : y) v = rng.normal();
  CHECK(std::abs(sedi(x, y, 0.90).value) < 0.05);
}

TEST_CASE("SEDI is symmetric under negation with the opposite tail") {
  Rng rng(6);
  std::vector<double> x(5000), y(5000), nx(5000), ny(5000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.normal();
    y[i] = x[i] + 0.5 * rng.normal();
    nx[i] = -x[i];
    ny[i] = -y[i];
  }
  for (double q : kSediQuantiles)
    CHECK(sedi(x, y, q).value == doctest::Approx(sedi(nx, ny, q, ExtremeSide::below).value).epsilon(1e-12));
}

TEST_CASE("RQE sign follows tail under- and over-estimation") {
  Rng rng(7);
  std::vector<double> x(5000);
  for (auto& v : x) v = 10 + rng.normal();
  CHECK(rqe(x, x) == 0.0);
  const double med = quantile(x, 0.5);
  std::vector<double> shrunk(x), inflated(x);
  for (auto& v : shrunk) v = med + 0.5 * (v - med);
  for (auto& v : inflated) v = med + 1.5 * (v - med);
  CHECK(rqe(x, shrunk) < 0);
  CHECK(rqe(x, inflated) > 0);
  std::vector<double> zeros(10, 0.0), ones(10, 1.0);
  CHECK(rqe(zeros, ones) == 1.0);
}

TEST_CASE("evaluate fills a consistent report") {
  Rng rng(8);
  std::vector<GridField> x{grid(2, 4, 8, rng)}, y{perturbed(x[0], rng, 0.1)};
  auto r = evaluate(x, y, compute_stats({x[0], y[0]}));
  CHECK(r.weighted_rmse.size() == 2);
  CHECK(r.sedi[1].size() == 4);
  CHECK(r.to_table().find("v1") != std::string::npos);
  CHECK(r.to_json().find("weighted_rmse") != std::string::npos);
  std::vector<GridField> wrong{grid(2, 4, 16, rng)};
  CHECK_THROWS_AS(evaluate(x, wrong, compute_stats(x)), DataError);
}
