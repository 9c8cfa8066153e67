#include <algorithm>
#include <cmath>
#include <numbers>

#include "cvc/entropy.hpp"

namespace cvc {

template <class T>
BasicTensor<T> quantize_train(const BasicTensor<T>& v, Rng& rng) {
  std::vector<T> noise(v.numel());
  for (auto& u : noise) u = static_cast<T>(rng.uniform() - 0.5);
  return add(v, BasicTensor<T>::from_data(v.shape(), std::move(noise)));
}

Quantized quantize_infer(std::span<const float> v, const SymbolRange& range) {
  Quantized q;
  q.values.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    // nearbyint honours the default round-to-nearest-even mode.
    const double r = std::nearbyint(static_cast<double>(v[i]));
    double c = r;
    if (!(r >= range.min)) c = range.min;  // also catches NaN
    if (r > range.max) c = range.max;
    if (c != r) ++q.clamped;
    q.values[i] = static_cast<std::int32_t>(c);
  }
  return q;
}

double standard_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double gaussian_bin_likelihood(double y, double mu, double sigma) {
  // Evaluate on the lower tail for accuracy: the bin mass is symmetric in
  // y - mu.
  const double d = std::abs(y - mu);
  return standard_normal_cdf((0.5 - d) / sigma) - standard_normal_cdf((-0.5 - d) / sigma);
}

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274;

double log_phi(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

// log of the upper tail Q(x) = 1 - Phi(x), accurate far into the tail.
double log_q(double x) {
  if (x < 30.0) return std::log(0.5 * std::erfc(x / std::numbers::sqrt2));
  const double r = 1.0 / (x * x);
  return log_phi(x) - std::log(x) + std::log1p(-r + 3 * r * r);
}

struct BinTerm {
  double log_p;      // log of the bin mass
  double dlogp_dd;   // with respect to d = |y - mu|
  double dlogp_ds;   // with respect to sigma
};

// Bin mass Q(u) - Q(v) with u = (d - 1/2)/s, v = (d + 1/2)/s, d >= 0.
BinTerm bin_term(double d, double s) {
  const double u = (d - 0.5) / s, v = (d + 0.5) / s;
  double log_p;
  if (u <= 0.0) {
    log_p = std::log(standard_normal_cdf(-u) - standard_normal_cdf(-v));
  } else {
    const double lu = log_q(u), lv = log_q(v);
    log_p = lu + std::log1p(-std::exp(lv - lu));
  }
  // dp = -phi(u) du + phi(v) dv; du/dd = dv/dd = 1/s, du/ds = -u/s, dv/ds = -v/s.
  const double wu = std::exp(log_phi(u) - log_p), wv = std::exp(log_phi(v) - log_p);
  return {log_p, (wv - wu) / s, (u * wu - v * wv) / s};
}

}  // namespace

template <class T>
BasicTensor<T> gaussian_rate_bits(const BasicTensor<T>& values, const BasicTensor<T>& mu,
                                  const BasicTensor<T>& sigma, double floor) {
  require_same_shape(values, mu, "gaussian_rate_bits");
  require_same_shape(values, sigma, "gaussian_rate_bits");
  const std::size_t n = values.numel();
  auto yv = values.data(), mv = mu.data(), sv = sigma.data();

  // Saved per element: d(bits)/d(y), d(bits)/d(sigma). d/d(mu) = -d/d(y).
  auto dy = std::make_shared<std::vector<double>>(n);
  auto ds = std::make_shared<std::vector<double>>(n);
  constexpr double inv_ln2 = 1.4426950408889634;
  const double log_floor = floor > 0 ? std::log(floor) : -INFINITY;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = static_cast<double>(yv[i]) - mv[i];
    const BinTerm b = bin_term(std::abs(e), sv[i]);
    if (b.log_p > log_floor) {
      total -= b.log_p * inv_ln2;
      (*dy)[i] = -inv_ln2 * b.dlogp_dd * (e >= 0 ? 1.0 : -1.0);
      (*ds)[i] = -inv_ln2 * b.dlogp_ds;
    } else {
      total -= log_floor * inv_ln2;
      (*dy)[i] = 0.0;
      (*ds)[i] = 0.0;
    }
  }
  return BasicTensor<T>::from_op(
      {}, {static_cast<T>(total)}, {values, mu, sigma},
      [dy, ds](Node<T>& nd) {
        const double g = nd.grad[0];
        const std::size_t n = dy->size();
        if (nd.inputs[0]->requires_grad) {
          auto& gy = nd.inputs[0]->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) gy[i] += static_cast<T>(g * (*dy)[i]);
        }
        if (nd.inputs[1]->requires_grad) {
          auto& gm = nd.inputs[1]->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) gm[i] -= static_cast<T>(g * (*dy)[i]);
        }
        if (nd.inputs[2]->requires_grad) {
          auto& gs = nd.inputs[2]->ensure_grad();
          for (std::size_t i = 0; i < n; ++i) gs[i] += static_cast<T>(g * (*ds)[i]);
        }
      },
      "gaussian_rate_bits");
}

template <class T>
FactorizedPrior FactorizedPrior::create(ParamStore<T>& ps, const std::string& name,
                                        std::size_t channels, double init_scale) {
  FactorizedPrior f;
  f.channels = channels;
  f.loc = ps.add(name + ".loc", BasicTensor<T>::zeros({channels}));
  // softplus^-1(init_scale)
  const double raw = init_scale > 20 ? init_scale : std::log(std::expm1(init_scale));
  f.raw_scale = ps.add(name + ".raw_scale", BasicTensor<T>::full({channels}, static_cast<T>(raw)));
  return f;
}

namespace {
std::vector<std::size_t> channel_index(std::size_t c, std::size_t hw) {
  std::vector<std::size_t> idx(c * hw);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i / hw;
  return idx;
}
}  // namespace

template <class T>
BasicTensor<T> FactorizedPrior::location(ParamSet<T> p, std::size_t height,
                                         std::size_t width) const {
  return gather(p[loc], channel_index(channels, height * width), {channels, height, width});
}

template <class T>
BasicTensor<T> FactorizedPrior::scale(ParamSet<T> p, std::size_t height, std::size_t width) const {
  auto s = add_scalar(softplus(p[raw_scale]), T(1e-6));
  return gather(s, channel_index(channels, height * width), {channels, height, width});
}

#define CVC_INSTANTIATE_LIK(T)                                                                  \
  template BasicTensor<T> quantize_train(const BasicTensor<T>&, Rng&);                          \
  template BasicTensor<T> gaussian_rate_bits(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                             const BasicTensor<T>&, double);                    \
  template FactorizedPrior FactorizedPrior::create(ParamStore<T>&, const std::string&,          \
                                                   std::size_t, double);                        \
  template BasicTensor<T> FactorizedPrior::location(ParamSet<T>, std::size_t, std::size_t)      \
      const;                                                                                    \
  template BasicTensor<T> FactorizedPrior::scale(ParamSet<T>, std::size_t, std::size_t) const;

CVC_INSTANTIATE_LIK(float)
CVC_INSTANTIATE_LIK(double)

}  // namespace cvc
