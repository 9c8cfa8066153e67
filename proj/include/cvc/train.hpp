#pragma once

// Two-phase optimization of the codec network.
//
// pretrain: encoder and decoder under reconstruction + beta * KL, with a
//           sampled latent.
// finetune: encoder frozen; decoder, hyper encoder/decoder and the hyper
//           prior under lambda * rate(y) + rate(z) + distortion, with
//           additive-noise quantization.
// joint:    as finetune but the encoder is trained too (used by rd-sweep).

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cvc/model.hpp"

namespace cvc {

enum class Phase { pretrain, finetune, joint };
std::string to_string(Phase p);
Phase parse_phase(const std::string& s);

struct TrainConfig {
  Phase phase = Phase::pretrain;
  double lr = 2e-4;
  std::size_t warmup = 200;
  std::size_t steps = 2000;
  std::size_t batch = 8;
  double weight_decay = 0.01;
  double lambda = 1.0;
  double beta = 1e-4;
  double clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;
  std::size_t validate_every = 500;
  std::size_t threads = 1;

  void validate() const;
};

double lr_schedule(std::size_t step, const TrainConfig& cfg);

// Loss contributions; `total` equals the sum of the four weighted terms.
struct LossParts {
  double total = 0, distortion = 0, kl = 0, rate_y = 0, rate_z = 0;
  // Unweighted quantities behind the terms.
  double kl_raw = 0, bits_y = 0, bits_z = 0, mse = 0;
};

template <class T>
struct Loss {
  BasicTensor<T> total;
  LossParts parts;
};

// 1/2 |x - x_hat|^2 + beta * KL(q || N(0, I)).
template <class T>
Loss<T> pretrain_loss(const BasicTensor<T>& x, const BasicTensor<T>& x_hat,
                      const GaussianField<T>& q, double beta);

// lambda * rate_y + rate_z + |x - x_hat|^2.
template <class T>
Loss<T> rd_loss(const BasicTensor<T>& x, const BasicTensor<T>& x_hat,
                const BasicTensor<T>& rate_y_bits, const BasicTensor<T>& rate_z_bits,
                double lambda);

// Full single-example forward passes. `rng` supplies epsilon (pretrain) or the
// quantization noise (finetune/joint); pass nullptr for the deterministic
// variant (epsilon = 0, or rounding instead of noise).
template <class T>
Loss<T> pretrain_forward(const VaeFormer<T>& m, ParamSet<T> p, const BasicTensor<T>& x, double beta,
                         Rng* rng);
template <class T>
Loss<T> rd_forward(const VaeFormer<T>& m, ParamSet<T> p, const BasicTensor<T>& x, double lambda,
                   Rng* rng);

// AdamW with decoupled weight decay.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Updates params[i] for which trainable[i] is set, using their gradients.
  void step(ParamStore<float>& ps, const std::vector<bool>& trainable, double lr, double wd);

  std::size_t steps() const { return t_; }
  // Moment buffers, kept in float so a checkpoint restores them exactly.
  // Empty until the first step touches a parameter.
  std::vector<std::vector<float>>& first() { return m_; }
  std::vector<std::vector<float>>& second() { return v_; }
  void set_steps(std::size_t t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// Parameter groups updated in each phase.
std::vector<bool> trainable_mask(const ParamStore<float>& ps, Phase phase);

// Global L2 norm of the masked gradients; scales them down to `max_norm` if
// larger. Returns the norm before clipping.
double clip_grad_norm(ParamStore<float>& ps, const std::vector<bool>& mask, double max_norm);

struct PhaseResult {
  std::size_t steps_run = 0;
  std::size_t best_step = 0;
  double best_val = 0;
  std::vector<double> train_loss;  // per step
  std::vector<std::pair<std::size_t, double>> val_loss;
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  bool resume = false;
  std::function<void(const std::string&)> log_line;  // receives each JSON record
};

// Trains `model` in place on normalized examples. On return the model holds
// the parameters with the lowest validation loss. With an out_dir, writes
// train_log.jsonl, last.ckpt / last.state (every checkpoint_every steps) and
// best.ckpt.
PhaseResult run_phase(const TrainConfig& cfg, VaeFormer<float>& model,
                      const std::vector<Tensor>& train, const std::vector<Tensor>& val,
                      const RunOptions& opts = {});

// Mean phase loss over `data` with fixed noise seeds.
double validation_loss(const TrainConfig& cfg, const VaeFormer<float>& model,
                       const std::vector<Tensor>& data);

// Fits the per-channel Gaussian used by the factorized coding mode to
// round(mu_x) over `data`.
void fit_latent_prior(VaeFormer<float>& model, const std::vector<Tensor>& data);

}  // namespace cvc
