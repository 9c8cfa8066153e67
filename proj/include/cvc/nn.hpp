#pragma once

// Parameter storage and the small set of layers the model is assembled from.
// Layers hold parameter ids, not tensors, so one layer definition can be run
// against the master parameters or against per-thread shadows.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvc/ops.hpp"
#include "cvc/rng.hpp"
#include "cvc/tensor.hpp"

namespace cvc {

template <class T>
using ParamSet = std::span<const BasicTensor<T>>;

template <class T>
class ParamStore {
 public:
  std::size_t add(std::string name, BasicTensor<T> init);

  std::size_t size() const { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  // Everything before the first '.', e.g. "enc" for "enc.block0.attn.qkv.w".
  std::string group(std::size_t i) const;
  std::optional<std::size_t> find(const std::string& name) const;

  BasicTensor<T>& operator[](std::size_t i) { return tensors_.at(i); }
  const BasicTensor<T>& operator[](std::size_t i) const { return tensors_.at(i); }
  ParamSet<T> view() const { return tensors_; }
  std::vector<BasicTensor<T>> shadows() const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> tensors_;
};

enum class Init { normal, zeros, ones };

struct Linear {
  std::size_t w = 0, b = 0;
  std::size_t in = 0, out = 0;

  template <class T>
  static Linear create(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t in,
                       std::size_t out, Init init = Init::normal);
  // x: [n, in] -> [n, out]
  template <class T>
  BasicTensor<T> operator()(ParamSet<T> p, const BasicTensor<T>& x) const;
};

struct LayerNormParams {
  std::size_t gain = 0, bias = 0;
  template <class T>
  static LayerNormParams create(ParamStore<T>& ps, const std::string& name, std::size_t dim);
  template <class T>
  BasicTensor<T> operator()(ParamSet<T> p, const BasicTensor<T>& x) const;
};

// Linear -> GELU -> Linear.
struct Mlp {
  Linear fc1, fc2;
  template <class T>
  static Mlp create(ParamStore<T>& ps, Rng& rng, const std::string& name, std::size_t dim,
                    std::size_t hidden);
  template <class T>
  BasicTensor<T> operator()(ParamSet<T> p, const BasicTensor<T>& x) const;
};

// Convolution with kernel == stride, written as patchify + linear:
// [C,H,W] -> [(H/kh)*(W/kw), D].
struct PatchEmbed {
  std::size_t channels = 0, kh = 1, kw = 1;
  Linear proj;
  template <class T>
  static PatchEmbed create(ParamStore<T>& ps, Rng& rng, const std::string& name,
                           std::size_t channels, std::size_t kh, std::size_t kw,
                           std::size_t dim);
  template <class T>
  BasicTensor<T> operator()(ParamSet<T> p, const BasicTensor<T>& x) const;
};

// Per-token projection to C*kh*kw values, then reshape back to [C,H,W].
struct PatchUnembed {
  std::size_t channels = 0, height = 0, width = 0, kh = 1, kw = 1;
  Linear proj;
  template <class T>
  static PatchUnembed create(ParamStore<T>& ps, Rng& rng, const std::string& name,
                             std::size_t dim, std::size_t channels, std::size_t height,
                             std::size_t width, std::size_t kh, std::size_t kw);
  template <class T>
  BasicTensor<T> operator()(ParamSet<T> p, const BasicTensor<T>& tokens) const;
};

}  // namespace cvc
