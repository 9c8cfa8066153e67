#include <cmath>

#include "cvc/hash.hpp"
#include "cvc/model.hpp"

namespace cvc {
namespace {

template <class T>
BasicTensor<T> position_table(Rng& rng, std::size_t tokens, std::size_t dim) {
  std::vector<T> v(tokens * dim);
  for (auto& e : v) e = static_cast<T>(rng.normal(0.0, 0.02));
  return BasicTensor<T>::from_data({tokens, dim}, std::move(v));
}

template <class T>
void require_shape(const BasicTensor<T>& t, const Shape& want, const char* what) {
  if (t.shape() != want)
    throw DimensionError(std::string(what) + ": expected " + shape_str(want) + ", got " +
                         shape_str(t.shape()));
}

}  // namespace

template <class T>
BasicTensor<T> VaeFormer<T>::Transformer::operator()(ParamSet<T> p, const BasicTensor<T>& x) const {
  auto tokens = add(embed(p, x), p[pos]);
  return norm(p, stack(p, tokens));
}

template <class T>
VaeFormer<T>::VaeFormer(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(derive_seed(cfg_.seed, 0x6d6f64656cull));
  const auto g = cfg_.token_grid(), hg = cfg_.hyper_grid();
  const std::size_t c = cfg_.channels, cy = cfg_.latent_channels, cz = cfg_.hyper_channels;
  const std::size_t d = cfg_.dim, dh = cfg_.hyper_dim;

  auto build = [&](const std::string& name, std::size_t in_ch, std::size_t k, TokenGrid grid,
                   std::size_t width, const ActConfig& act) {
    Transformer t;
    t.embed = PatchEmbed::create(ps_, rng, name + ".embed", in_ch, k, k, width);
    t.pos = ps_.add(name + ".pos", position_table<T>(rng, grid.tokens(), width));
    t.stack = ActStack::create(ps_, rng, name + ".act", act);
    t.norm = LayerNormParams::create(ps_, name + ".norm", width);
    return t;
  };

  enc_ = build("enc", c, cfg_.patch, g, d, cfg_.act());
  enc_mu_ = Linear::create(ps_, rng, "enc.mu", d, cy);
  enc_s_ = Linear::create(ps_, rng, "enc.log_sigma", d, cy);

  dec_ = build("dec", cy, 1, g, d, cfg_.act());
  dec_out_ = PatchUnembed::create(ps_, rng, "dec.out", d, c, cfg_.height, cfg_.width, cfg_.patch,
                                  cfg_.patch);

  hyper_enc_ = build("hyper_enc", cy, cfg_.hyper_patch, hg, dh, cfg_.hyper_act());
  hyper_z_ = Linear::create(ps_, rng, "hyper_enc.z", dh, cz);

  hyper_dec_ = build("hyper_dec", cz, 1, hg, dh, cfg_.hyper_act());
  hyper_mu_ = PatchUnembed::create(ps_, rng, "hyper_dec.mu", dh, cy, g.height, g.width,
                                   cfg_.hyper_patch, cfg_.hyper_patch);
  hyper_s_ = PatchUnembed::create(ps_, rng, "hyper_dec.sigma", dh, cy, g.height, g.width,
                                  cfg_.hyper_patch, cfg_.hyper_patch);

  z_prior_ = FactorizedPrior::create(ps_, "prior", cz, 1.0);
  y_prior_ = FactorizedPrior::create(ps_, "latent_prior", cy, 1.0);
}

template <class T>
GaussianField<T> VaeFormer<T>::encode_latent(ParamSet<T> p, const BasicTensor<T>& x) const {
  require_shape(x, {cfg_.channels, cfg_.height, cfg_.width}, "encode_latent");
  const auto g = cfg_.token_grid();
  auto h = enc_(p, x);
  auto to_grid = [&](const BasicTensor<T>& t) {
    return unpatchify(t, cfg_.latent_channels, g.height, g.width, 1, 1);
  };
  auto s = clamp(enc_s_(p, h), T(-10), T(10));
  return {to_grid(enc_mu_(p, h)), to_grid(exp(s))};
}

template <class T>
BasicTensor<T> VaeFormer<T>::decode_reconstruction(ParamSet<T> p, const BasicTensor<T>& y) const {
  const auto g = cfg_.token_grid();
  require_shape(y, {cfg_.latent_channels, g.height, g.width}, "decode_reconstruction");
  return dec_out_(p, dec_(p, y));
}

template <class T>
BasicTensor<T> VaeFormer<T>::hyper_encode(ParamSet<T> p, const BasicTensor<T>& y) const {
  const auto g = cfg_.token_grid(), hg = cfg_.hyper_grid();
  require_shape(y, {cfg_.latent_channels, g.height, g.width}, "hyper_encode");
  return unpatchify(hyper_z_(p, hyper_enc_(p, y)), cfg_.hyper_channels, hg.height, hg.width, 1, 1);
}

template <class T>
GaussianField<T> VaeFormer<T>::hyper_decode(ParamSet<T> p, const BasicTensor<T>& z_hat) const {
  const auto hg = cfg_.hyper_grid();
  require_shape(z_hat, {cfg_.hyper_channels, hg.height, hg.width}, "hyper_decode");
  auto h = hyper_dec_(p, z_hat);
  return {hyper_mu_(p, h), add_scalar(softplus(hyper_s_(p, h)), T(1e-6))};
}

template <class T>
GaussianField<T> VaeFormer<T>::hyper_prior(ParamSet<T> p) const {
  const auto hg = cfg_.hyper_grid();
  return {z_prior_.location(p, hg.height, hg.width), z_prior_.scale(p, hg.height, hg.width)};
}

template <class T>
GaussianField<T> VaeFormer<T>::latent_prior(ParamSet<T> p) const {
  const auto g = cfg_.token_grid();
  return {y_prior_.location(p, g.height, g.width), y_prior_.scale(p, g.height, g.width)};
}

template <class T>
void VaeFormer<T>::set_latent_prior(std::span<const double> loc, std::span<const double> scale) {
  if (loc.size() != cfg_.latent_channels || scale.size() != cfg_.latent_channels)
    throw DimensionError("latent prior expects one location and scale per latent channel");
  auto l = ps_[y_prior_.loc].mutable_data();
  auto r = ps_[y_prior_.raw_scale].mutable_data();
  for (std::size_t c = 0; c < loc.size(); ++c) {
    if (!(scale[c] > 1e-6)) throw NumericalError("latent prior scale must be positive");
    l[c] = static_cast<T>(loc[c]);
    // Inverse of softplus(r) + 1e-6.
    const double s = scale[c] - 1e-6;
    r[c] = static_cast<T>(s > 20 ? s : std::log(std::expm1(s)));
  }
}

template <class T>
Checkpoint VaeFormer<T>::to_checkpoint(const std::string& extra_meta) const {
  Checkpoint c;
  c.meta = cfg_.to_text() + "config_hash=" + hex64(cfg_.hash()) + "\n" + extra_meta;
  for (std::size_t i = 0; i < ps_.size(); ++i) {
    const auto& t = ps_[i];
    std::vector<float> v(t.data().begin(), t.data().end());
    c.tensors.emplace_back(ps_.name(i), Tensor::from_data(t.shape(), std::move(v)));
  }
  return c;
}

template <class T>
void VaeFormer<T>::load(const Checkpoint& ckpt) {
  const auto cfg = checkpoint_config(ckpt);
  if (cfg.hash() != cfg_.hash())
    throw DataError("checkpoint model config hash " + hex64(cfg.hash()) +
                    " does not match the model's " + hex64(cfg_.hash()));
  if (ckpt.tensors.size() != ps_.size())
    throw DataError("checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                    " tensors, model has " + std::to_string(ps_.size()));
  for (std::size_t i = 0; i < ps_.size(); ++i) {
    const Tensor* src = ckpt.find(ps_.name(i));
    if (!src) throw DataError("checkpoint is missing parameter " + ps_.name(i));
    if (src->shape() != ps_[i].shape())
      throw DataError("checkpoint parameter " + ps_.name(i) + " has shape " +
                      shape_str(src->shape()) + ", expected " + shape_str(ps_[i].shape()));
    auto dst = ps_[i].mutable_data();
    std::copy(src->data().begin(), src->data().end(), dst.begin());
  }
}

template <class T>
BasicTensor<T> reparameterize(const GaussianField<T>& q, const BasicTensor<T>& eps) {
  return add(q.mean, mul(q.scale, eps));
}

template <class T>
BasicTensor<T> kl_to_standard_normal(const GaussianField<T>& q) {
  require_same_shape(q.mean, q.scale, "kl_to_standard_normal");
  auto terms = add(sub(add(square(q.mean), square(q.scale)), scale(log(q.scale), T(2))),
                   BasicTensor<T>::full(q.mean.shape(), T(-1)));
  return scale(sum(terms), T(0.5));
}

#define CVC_INSTANTIATE_MODEL(T)                                                         \
  template class VaeFormer<T>;                                                           \
  template BasicTensor<T> reparameterize(const GaussianField<T>&, const BasicTensor<T>&); \
  template BasicTensor<T> kl_to_standard_normal(const GaussianField<T>&);

CVC_INSTANTIATE_MODEL(float)
CVC_INSTANTIATE_MODEL(double)

}  // namespace cvc
