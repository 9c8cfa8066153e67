#include "cvc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "json.hpp"

namespace cvc {
namespace {

void require_pairs(std::span<const GridField> x, std::span<const GridField> x_hat) {
  if (x.empty()) throw DataError("metrics need at least one instance");
  if (x.size() != x_hat.size())
    throw DataError("metrics: " + std::to_string(x.size()) + " references but " +
                    std::to_string(x_hat.size()) + " reconstructions");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!x[i].same_grid(x_hat[i]) || !x[i].same_grid(x[0]))
      throw DataError("metrics: instance " + std::to_string(i) + " is on a different grid");
}

double clamp_rate(double r, bool& flag) {
  constexpr double eps = 1e-9;
  if (r < eps || r > 1 - eps) flag = true;
  return std::clamp(r, eps, 1 - eps);
}

}  // namespace

std::vector<double> latitude_weights(std::span<const float> lat_deg) {
  if (lat_deg.empty()) throw DataError("latitude_weights: no rows");
  std::vector<double> w(lat_deg.size());
  double total = 0;
  for (std::size_t h = 0; h < w.size(); ++h) {
    w[h] = std::cos(static_cast<double>(lat_deg[h]) * std::numbers::pi / 180.0);
    total += w[h];
  }
  if (!(total > 0)) throw DataError("latitude_weights: cosine weights sum to zero");
  for (auto& v : w) v *= static_cast<double>(w.size()) / total;
  return w;
}

double weighted_rmse(const GridField& x, const GridField& x_hat, std::size_t c) {
  if (!x.same_grid(x_hat)) throw DataError("weighted_rmse: grids differ");
  if (c >= x.channels) throw DataError("weighted_rmse: channel out of range");
  const auto wts = latitude_weights(x.lat);
  double s = 0;
  for (std::size_t h = 0; h < x.height; ++h)
    for (std::size_t w = 0; w < x.width; ++w) {
      const double d = static_cast<double>(x.at(c, h, w)) - x_hat.at(c, h, w);
      s += wts[h] * d * d;
    }
  return std::sqrt(s / static_cast<double>(x.height * x.width));
}

double weighted_rmse(std::span<const GridField> x, std::span<const GridField> x_hat, std::size_t c) {
  require_pairs(x, x_hat);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += weighted_rmse(x[i], x_hat[i], c);
  return s / static_cast<double>(x.size());
}

double overall_mse(std::span<const GridField> x, std::span<const GridField> x_hat,
                   const NormStats& stats) {
  require_pairs(x, x_hat);
  if (stats.channels() != x[0].channels) throw DataError("overall_mse: stats do not match the grid");
  const std::size_t hw = x[0].height * x[0].width;
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t c = 0; c < stats.channels(); ++c)
      for (std::size_t k = 0; k < hw; ++k) {
        const double d = (static_cast<double>(x[i].values[c * hw + k]) - x_hat[i].values[c * hw + k]) /
                         stats.stddev[c];
        s += d * d;
      }
  return 100.0 * s / static_cast<double>(x.size() * x[0].size());
}

SizeMetrics bpsp_and_ratio(std::uint64_t compressed_bytes, std::uint64_t values, unsigned source_bits) {
  if (values == 0) throw DataError("bpsp_and_ratio: zero values");
  if (compressed_bytes == 0) throw DataError("bpsp_and_ratio: zero compressed bytes");
  const double bytes = static_cast<double>(compressed_bytes), n = static_cast<double>(values);
  return {8.0 * bytes / n, n * source_bits / 8.0 / bytes};
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw DataError("quantile of an empty sample");
  if (!(q >= 0 && q <= 1)) throw DataError("quantile level must be in [0, 1]");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

SediResult sedi(std::span<const double> x, std::span<const double> x_hat, double q, ExtremeSide side) {
  if (x.empty() || x.size() != x_hat.size()) throw DataError("sedi: fields must be nonempty and equal in size");
  const std::vector<double> ref(x.begin(), x.end());
  const bool above = side == ExtremeSide::above;
  const double thr = quantile(ref, above ? q : 1 - q);
  auto extreme = [&](double v) { return above ? v > thr : v < thr; };
  double hits = 0, misses = 0, false_alarms = 0, rejections = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool e = extreme(x[i]), p = extreme(x_hat[i]);
    if (e) (p ? hits : misses) += 1;
    else (p ? false_alarms : rejections) += 1;
  }
  SediResult r;
  r.hit_rate = hits + misses > 0 ? hits / (hits + misses) : 0.0;
  r.false_alarm_rate = false_alarms + rejections > 0 ? false_alarms / (false_alarms + rejections) : 0.0;
  const double h = clamp_rate(r.hit_rate, r.degenerate), f = clamp_rate(r.false_alarm_rate, r.degenerate);
  const double lf = std::log(f), lh = std::log(h), l1f = std::log1p(-f), l1h = std::log1p(-h);
  r.value = (lf - lh - l1f + l1h) / (lf + lh + l1f + l1h);
  return r;
}

double rqe(std::span<const double> x, std::span<const double> x_hat) {
  if (x.empty() || x_hat.empty()) throw DataError("rqe: fields must be nonempty");
  const std::vector<double> a(x.begin(), x.end()), b(x_hat.begin(), x_hat.end());
  double num = 0, den = 0;
  for (double q : kRqeQuantiles) {
    const double qa = quantile(a, q);
    num += quantile(b, q) - qa;
    den += std::abs(qa);
  }
  if (den == 0) return num == 0 ? 0.0 : (num > 0 ? 1.0 : -1.0);
  return std::clamp(num / den, -1.0, 1.0);
}

std::vector<double> pooled_channel(std::span<const GridField> fields, std::size_t c) {
  std::vector<double> out;
  for (const auto& g : fields) {
    if (c >= g.channels) throw DataError("pooled_channel: channel out of range");
    const std::size_t hw = g.height * g.width;
    out.insert(out.end(), g.values.begin() + c * hw, g.values.begin() + (c + 1) * hw);
  }
  return out;
}

EvalReport evaluate(std::span<const GridField> x, std::span<const GridField> x_hat,
                    const NormStats& stats) {
  require_pairs(x, x_hat);
  EvalReport r;
  r.channels = x[0].names;
  r.overall_mse = overall_mse(x, x_hat, stats);
  for (std::size_t c = 0; c < x[0].channels; ++c) {
    r.weighted_rmse.push_back(weighted_rmse(x, x_hat, c));
    const auto a = pooled_channel(x, c), b = pooled_channel(x_hat, c);
    std::vector<SediResult> row;
    for (double q : kSediQuantiles) row.push_back(sedi(a, b, q));
    r.sedi.push_back(std::move(row));
    r.rqe.push_back(rqe(a, b));
  }
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["overall_mse_x100"] = overall_mse;
  j["compression_ratio"] = ratio;
  j["bpsp"] = bpsp;
  j["compressed_bytes"] = compressed_bytes;
  j["values"] = values;
  j["encode_seconds"] = encode_seconds;
  j["decode_seconds"] = decode_seconds;
  j["clamped_symbols"] = clamped;
  nlohmann::json per = nlohmann::json::array();
  for (std::size_t c = 0; c < channels.size(); ++c) {
    nlohmann::json e{{"name", channels[c]}, {"weighted_rmse", weighted_rmse[c]}, {"rqe", rqe[c]}};
    nlohmann::json s = nlohmann::json::object();
    for (std::size_t k = 0; k < sedi[c].size(); ++k) {
      char key[16];
      std::snprintf(key, sizeof key, "%.3f", kSediQuantiles[k]);
      s[key] = {{"sedi", sedi[c][k].value},
                {"hit_rate", sedi[c][k].hit_rate},
                {"false_alarm_rate", sedi[c][k].false_alarm_rate},
                {"degenerate", sedi[c][k].degenerate}};
    }
    e["sedi"] = s;
    per.push_back(e);
  }
  j["channels"] = per;
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %12s %8s %8s %8s %8s %8s\n", "channel", "wRMSE", "SEDI90",
                "SEDI95", "SEDI98", "SEDI995", "RQE");
  out += line;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    std::snprintf(line, sizeof line, "%-8s %12.5g %8.4f %8.4f %8.4f %8.4f %+8.4f\n", channels[c].c_str(),
                  weighted_rmse[c], sedi[c][0].value, sedi[c][1].value, sedi[c][2].value,
                  sedi[c][3].value, rqe[c]);
    out += line;
  }
  std::snprintf(line, sizeof line,
                "overall MSE x100 %.4f | ratio %.2f | bpsp %.4f | bytes %llu | clamped %llu\n",
                overall_mse, ratio, bpsp, static_cast<unsigned long long>(compressed_bytes),
                static_cast<unsigned long long>(clamped));
  out += line;
  return out;
}

}  // namespace cvc
