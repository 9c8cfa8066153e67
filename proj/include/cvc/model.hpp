#pragma once

// The dual-VAE codec network.
//
//   x [C,H,W] --enc--> (mu_x, sigma_x) [Cy,h,w] --sample/mean--> y
//   y --dec--> x_hat [C,H,W]
//   y --hyper_enc--> z [Cz,hh,hw] --Q--> z_hat --hyper_dec--> (mu, sigma) for y_hat
//
// Every transformer in the network is a patch embedding, a learned absolute
// position embedding and an ActStack on its token grid.

#include <cstdint>
#include <string>

#include "cvc/attention.hpp"
#include "cvc/checkpoint.hpp"
#include "cvc/entropy.hpp"
#include "cvc/nn.hpp"

namespace cvc {

struct ModelConfig {
  std::size_t channels = 8, height = 32, width = 64;
  std::size_t patch = 4;
  std::size_t dim = 64, heads = 4, mlp_hidden = 128, depth = 1;
  std::size_t win_square = 4;                      // win_square x win_square
  std::size_t ew_h = 2, ew_w = 8, ns_h = 8, ns_w = 2;

  std::size_t latent_channels = 8;
  std::size_t hyper_patch = 4;
  std::size_t hyper_dim = 32, hyper_heads = 2, hyper_mlp_hidden = 64, hyper_depth = 1;
  std::size_t hyper_win_square = 2;
  std::size_t hyper_ew_h = 1, hyper_ew_w = 4, hyper_ns_h = 2, hyper_ns_w = 1;
  std::size_t hyper_channels = 8;

  std::int32_t symbol_min = -128, symbol_max = 127;
  double lambda = 1.0;
  std::uint64_t seed = 0;

  TokenGrid token_grid() const { return {height / patch, width / patch}; }
  TokenGrid hyper_grid() const {
    const auto g = token_grid();
    return {g.height / hyper_patch, g.width / hyper_patch};
  }
  ActConfig act() const;
  ActConfig hyper_act() const;
  SymbolRange symbols() const { return {symbol_min, symbol_max}; }

  // Throws ConfigError naming the first violated constraint.
  void validate() const;

  // Canonical "key=value" lines in a fixed order; the hash covers exactly this text.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  // Applies one key=value pair; unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
  std::uint64_t hash() const;
};

template <class T>
struct GaussianField {
  BasicTensor<T> mean, scale;
};

template <class T>
class VaeFormer {
 public:
  explicit VaeFormer(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return ps_; }
  const ParamStore<T>& params() const { return ps_; }

  // Encoder g,h: sigma_x = exp(clamp(s, -10, 10)).
  GaussianField<T> encode_latent(ParamSet<T> p, const BasicTensor<T>& x) const;
  BasicTensor<T> decode_reconstruction(ParamSet<T> p, const BasicTensor<T>& y) const;
  BasicTensor<T> hyper_encode(ParamSet<T> p, const BasicTensor<T>& y) const;
  // sigma = softplus(s) + 1e-6.
  GaussianField<T> hyper_decode(ParamSet<T> p, const BasicTensor<T>& z_hat) const;

  // Learned per-channel prior for z_hat, expanded to the hyper grid.
  GaussianField<T> hyper_prior(ParamSet<T> p) const;
  // Per-channel Gaussian for y_hat without side information; fitted after
  // pretraining and used only by the factorized coding mode.
  GaussianField<T> latent_prior(ParamSet<T> p) const;
  void set_latent_prior(std::span<const double> loc, std::span<const double> scale);

  GaussianField<T> encode_latent(const BasicTensor<T>& x) const { return encode_latent(ps_.view(), x); }
  BasicTensor<T> decode_reconstruction(const BasicTensor<T>& y) const {
    return decode_reconstruction(ps_.view(), y);
  }
  BasicTensor<T> hyper_encode(const BasicTensor<T>& y) const { return hyper_encode(ps_.view(), y); }
  GaussianField<T> hyper_decode(const BasicTensor<T>& z_hat) const {
    return hyper_decode(ps_.view(), z_hat);
  }

  Checkpoint to_checkpoint(const std::string& extra_meta = "") const;
  // Replaces all parameter values; the checkpoint's config hash must match.
  void load(const Checkpoint& ckpt);

 private:
  struct Transformer {
    PatchEmbed embed;
    std::size_t pos = 0;
    ActStack stack;
    LayerNormParams norm;
    BasicTensor<T> operator()(ParamSet<T> p, const BasicTensor<T>& x) const;
  };

  ModelConfig cfg_;
  ParamStore<T> ps_;
  Transformer enc_, dec_, hyper_enc_, hyper_dec_;
  Linear enc_mu_, enc_s_, hyper_z_;
  PatchUnembed dec_out_, hyper_mu_, hyper_s_;
  FactorizedPrior z_prior_, y_prior_;
};

template <class T>
BasicTensor<T> reparameterize(const GaussianField<T>& q, const BasicTensor<T>& eps);

// 1/2 sum(-log sigma^2 + mu^2 + sigma^2 - 1).
template <class T>
BasicTensor<T> kl_to_standard_normal(const GaussianField<T>& q);

// Reads the config section of a checkpoint and checks its hash.
ModelConfig checkpoint_config(const Checkpoint& ckpt);
// Value of "key=..." in checkpoint meta text, or empty.
std::string meta_value(const std::string& meta, const std::string& key);

}  // namespace cvc
