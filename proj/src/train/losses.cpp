#include <cmath>

#include "cvc/entropy.hpp"
#include "cvc/train.hpp"

namespace cvc {
namespace {

template <class T>
BasicTensor<T> noisy(const BasicTensor<T>& v, Rng* rng) {
  if (rng) return quantize_train(v, *rng);
  std::vector<T> r(v.numel());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = std::nearbyint(v.at(i));
  return BasicTensor<T>::from_data(v.shape(), std::move(r));
}

template <class T>
double mse_of(const BasicTensor<T>& x, const BasicTensor<T>& x_hat) {
  double s = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x.at(i)) - x_hat.at(i);
    s += d * d;
  }
  return s / static_cast<double>(x.numel());
}

}  // namespace

std::string to_string(Phase p) {
  switch (p) {
    case Phase::pretrain: return "pretrain";
    case Phase::finetune: return "finetune";
    case Phase::joint: return "joint";
  }
  return "?";
}

Phase parse_phase(const std::string& s) {
  if (s == "pretrain") return Phase::pretrain;
  if (s == "finetune") return Phase::finetune;
  if (s == "joint") return Phase::joint;
  throw ConfigError("unknown phase '" + s + "' (expected pretrain, finetune or joint)");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("train: lr must be > 0");
  if (steps == 0) throw ConfigError("train: steps must be > 0");
  if (warmup >= steps) throw ConfigError("train: warmup must be < steps");
  if (batch == 0) throw ConfigError("train: batch must be > 0");
  if (weight_decay < 0) throw ConfigError("train: weight_decay must be >= 0");
  if (!(lambda > 0)) throw ConfigError("train: lambda must be > 0");
  if (beta < 0) throw ConfigError("train: beta must be >= 0");
  if (!(clip > 0)) throw ConfigError("train: clip must be > 0");
  if (checkpoint_every == 0 || validate_every == 0)
    throw ConfigError("train: checkpoint and validation cadence must be > 0");
}

double lr_schedule(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup) return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup);
  const double t = static_cast<double>(std::min(step, cfg.steps) - cfg.warmup) /
                   static_cast<double>(cfg.steps - cfg.warmup);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template <class T>
Loss<T> pretrain_loss(const BasicTensor<T>& x, const BasicTensor<T>& x_hat,
                      const GaussianField<T>& q, double beta) {
  require_same_shape(x, x_hat, "pretrain_loss");
  auto dist = scale(sum(square(sub(x, x_hat))), T(0.5));
  auto kl = kl_to_standard_normal(q);
  Loss<T> l;
  l.total = add(dist, scale(kl, static_cast<T>(beta)));
  l.parts.distortion = dist.item();
  l.parts.kl_raw = kl.item();
  l.parts.kl = beta * l.parts.kl_raw;
  l.parts.total = l.parts.distortion + l.parts.kl;
  l.parts.mse = mse_of(x, x_hat);
  return l;
}

template <class T>
Loss<T> rd_loss(const BasicTensor<T>& x, const BasicTensor<T>& x_hat,
                const BasicTensor<T>& rate_y_bits, const BasicTensor<T>& rate_z_bits,
                double lambda) {
  require_same_shape(x, x_hat, "rd_loss");
  auto dist = sum(square(sub(x, x_hat)));
  Loss<T> l;
  l.total = add(add(scale(rate_y_bits, static_cast<T>(lambda)), rate_z_bits), dist);
  l.parts.distortion = dist.item();
  l.parts.bits_y = rate_y_bits.item();
  l.parts.bits_z = rate_z_bits.item();
  l.parts.rate_y = lambda * l.parts.bits_y;
  l.parts.rate_z = l.parts.bits_z;
  l.parts.total = l.parts.rate_y + l.parts.rate_z + l.parts.distortion;
  l.parts.mse = mse_of(x, x_hat);
  return l;
}

template <class T>
Loss<T> pretrain_forward(const VaeFormer<T>& m, ParamSet<T> p, const BasicTensor<T>& x, double beta,
                         Rng* rng) {
  auto q = m.encode_latent(p, x);
  BasicTensor<T> y = q.mean;
  if (rng) {
    std::vector<T> eps(q.mean.numel());
    for (auto& e : eps) e = static_cast<T>(rng->normal());
    y = reparameterize(q, BasicTensor<T>::from_data(q.mean.shape(), std::move(eps)));
  }
  return pretrain_loss(x, m.decode_reconstruction(p, y), q, beta);
}

template <class T>
Loss<T> rd_forward(const VaeFormer<T>& m, ParamSet<T> p, const BasicTensor<T>& x, double lambda,
                   Rng* rng) {
  auto y = m.encode_latent(p, x).mean;
  auto y_tilde = noisy(y, rng);
  auto z_tilde = noisy(m.hyper_encode(p, y), rng);
  auto coding = m.hyper_decode(p, z_tilde);
  auto prior = m.hyper_prior(p);
  // Scales are clamped to the range of the coder's scale grid.
  const T lo = static_cast<T>(scale_level(0)), hi = static_cast<T>(scale_level(63));
  // Unfloored rates: the floor would cut the gradient for badly predicted values.
  auto bits_y = gaussian_rate_bits(y_tilde, coding.mean, clamp(coding.scale, lo, hi), 0.0);
  auto bits_z = gaussian_rate_bits(z_tilde, prior.mean, clamp(prior.scale, lo, hi), 0.0);
  return rd_loss(x, m.decode_reconstruction(p, y_tilde), bits_y, bits_z, lambda);
}

#define CVC_INSTANTIATE_LOSS(T)                                                                  \
  template Loss<T> pretrain_loss(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const GaussianField<T>&, double);                               \
  template Loss<T> rd_loss(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                           const BasicTensor<T>&, double);                                       \
  template Loss<T> pretrain_forward(const VaeFormer<T>&, ParamSet<T>, const BasicTensor<T>&,     \
                                    double, Rng*);                                               \
  template Loss<T> rd_forward(const VaeFormer<T>&, ParamSet<T>, const BasicTensor<T>&, double,   \
                              Rng*);

CVC_INSTANTIATE_LOSS(float)
CVC_INSTANTIATE_LOSS(double)

}  // namespace cvc
