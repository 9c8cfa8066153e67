#include "cvc/nn.hpp"

#include <cmath>

namespace cvc {

template <class T>
std::size_t ParamStore<T>::add(std::string name, BasicTensor<T> init) {
  if (find(name)) throw ConfigError("duplicate parameter name " + name);
  init.set_requires_grad(true);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(init));
  return tensors_.size() - 1;
}

template <class T>
std::string ParamStore<T>::group(std::size_t i) const {
  const auto& n = names_.at(i);
  return n.substr(0, n.find('.'));
}

template <class T>
std::optional<std::size_t> ParamStore<T>::find(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

template <class T>
std::vector<BasicTensor<T>> ParamStore<T>::shadows() const {
  std::vector<BasicTensor<T>> out;
  out.reserve(tensors_.size());
  for (const auto& t : tensors_) out.push_back(t.shadow());
  return out;
}

template <class T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

template <class T>
void ParamStore<T>::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

template <class T>
Linear Linear::create(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t in,
                      std::size_t out, Init init) {
  std::vector<T> w(in * out, T(0));
  if (init == Init::normal) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : w) v = static_cast<T>(rng.normal() * sd);
  }
  Linear l;
  l.in = in;
  l.out = out;
  l.w = ps.add(name + ".w", BasicTensor<T>::from_data({in, out}, std::move(w)));
  l.b = ps.add(name + ".b", BasicTensor<T>::zeros({out}));
  return l;
}

template <class T>
BasicTensor<T> Linear::operator()(ParamSet<T> p, const BasicTensor<T>& x) const {
  return linear(x, p[w], p[b]);
}

template <class T>
LayerNormParams LayerNormParams::create(ParamStore<T>& ps, const std::string& name,
                                        std::size_t dim) {
  LayerNormParams l;
  l.gain = ps.add(name + ".g", BasicTensor<T>::full({dim}, T(1)));
  l.bias = ps.add(name + ".b", BasicTensor<T>::zeros({dim}));
  return l;
}

template <class T>
BasicTensor<T> LayerNormParams::operator()(ParamSet<T> p, const BasicTensor<T>& x) const {
  return layernorm(x, p[gain], p[bias], T(1e-5));
}

template <class T>
Mlp Mlp::create(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t dim,
                std::size_t hidden) {
  Mlp m;
  m.fc1 = Linear::create(ps, rng, name + ".fc1", dim, hidden);
  m.fc2 = Linear::create(ps, rng, name + ".fc2", hidden, dim);
  return m;
}

template <class T>
BasicTensor<T> Mlp::operator()(ParamSet<T> p, const BasicTensor<T>& x) const {
  return fc2(p, gelu(fc1(p, x)));
}

template <class T>
PatchEmbed PatchEmbed::create(ParamStore<T>& ps, Rng& rng, const std::string& name,
                              std::size_t channels, std::size_t kh, std::size_t kw,
                              std::size_t dim) {
  PatchEmbed e;
  e.channels = channels;
  e.kh = kh;
  e.kw = kw;
  e.proj = Linear::create(ps, rng, name, channels * kh * kw, dim);
  return e;
}

template <class T>
BasicTensor<T> PatchEmbed::operator()(ParamSet<T> p, const BasicTensor<T>& x) const {
  if (x.rank() != 3 || x.dim(0) != channels)
    throw DimensionError("patch_embed: expected " + std::to_string(channels) +
                         " channels, got " + shape_str(x.shape()));
  return proj(p, patchify(x, kh, kw));
}

template <class T>
PatchUnembed PatchUnembed::create(ParamStore<T>& ps, Rng& rng, const std::string& name,
                                  std::size_t dim, std::size_t channels, std::size_t height,
                                  std::size_t width, std::size_t kh, std::size_t kw) {
  PatchUnembed u;
  u.channels = channels;
  u.height = height;
  u.width = width;
  u.kh = kh;
  u.kw = kw;
  u.proj = Linear::create(ps, rng, name, dim, channels * kh * kw);
  return u;
}

template <class T>
BasicTensor<T> PatchUnembed::operator()(ParamSet<T> p, const BasicTensor<T>& tokens) const {
  return unpatchify(proj(p, tokens), channels, height, width, kh, kw);
}

#define CVC_INSTANTIATE_NN(T)                                                                   \
  template class ParamStore<T>;                                                                 \
  template Linear Linear::create(ParamStore<T>&, Rng&, const std::string&, std::size_t,         \
                                 std::size_t, Init);                                            \
  template BasicTensor<T> Linear::operator()(ParamSet<T>, const BasicTensor<T>&) const;         \
  template LayerNormParams LayerNormParams::create(ParamStore<T>&, const std::string&,          \
                                                   std::size_t);                                \
  template BasicTensor<T> LayerNormParams::operator()(ParamSet<T>, const BasicTensor<T>&)       \
      const;                                                                                    \
  template Mlp Mlp::create(ParamStore<T>&, Rng&, const std::string&, std::size_t, std::size_t); \
  template BasicTensor<T> Mlp::operator()(ParamSet<T>, const BasicTensor<T>&) const;            \
  template PatchEmbed PatchEmbed::create(ParamStore<T>&, Rng&, const std::string&,              \
                                         std::size_t, std::size_t, std::size_t, std::size_t);   \
  template BasicTensor<T> PatchEmbed::operator()(ParamSet<T>, const BasicTensor<T>&) const;     \
  template PatchUnembed PatchUnembed::create(ParamStore<T>&, Rng&, const std::string&,          \
                                             std::size_t, std::size_t, std::size_t,             \
                                             std::size_t, std::size_t, std::size_t);            \
  template BasicTensor<T> PatchUnembed::operator()(ParamSet<T>, const BasicTensor<T>&) const;

CVC_INSTANTIATE_NN(float)
CVC_INSTANTIATE_NN(double)

}  // namespace cvc
