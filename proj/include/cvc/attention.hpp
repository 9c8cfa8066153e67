#pragma once

// Atmospheric-circulation transformer (ACT) blocks: window attention in
// square, east-west and north-south shapes, interleaved with global
// multi-head attention.
//
// Tokens are kept as a row-major [H*W, D] matrix for a token grid of H rows
// (latitude) and W columns (longitude).

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cvc/nn.hpp"

namespace cvc {

enum class WindowKind { square, east_west, north_south, global };

std::string to_string(WindowKind k);

struct TokenGrid {
  std::size_t height = 0, width = 0;
  std::size_t tokens() const { return height * width; }
  bool operator==(const TokenGrid&) const = default;
};

struct WindowSpec {
  std::size_t win_h = 0, win_w = 0;
  WindowKind kind = WindowKind::square;

  // Checks win_h*win_w > 0 and that the aspect matches the kind.
  static WindowSpec make(std::size_t win_h, std::size_t win_w, WindowKind kind);
  static WindowSpec global(const TokenGrid& grid);

  std::size_t tokens() const { return win_h * win_w; }
  std::size_t count(const TokenGrid& grid) const {
    return (grid.height / win_h) * (grid.width / win_w);
  }
  bool operator==(const WindowSpec&) const = default;
};

// ConfigError unless the window tiles the grid exactly.
void check_tiles(const TokenGrid& grid, const WindowSpec& spec);

// order[w * L + l] = token index of position l (row-major within the window)
// of window w (row-major window order).
std::vector<std::size_t> window_token_order(const TokenGrid& grid, const WindowSpec& spec);

// [H*W, D] -> [windows, L, D]
template <class T>
BasicTensor<T> window_partition(const BasicTensor<T>& tokens, const TokenGrid& grid,
                                const WindowSpec& spec);
// [windows, L, D] -> [H*W, D]
template <class T>
BasicTensor<T> window_merge(const BasicTensor<T>& windows, const TokenGrid& grid,
                            const WindowSpec& spec);

// softmax(Q K^T / sqrt(d_k)) V, for [n, d] or batched [b, n, d] operands.
template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                         const BasicTensor<T>& v);

struct AttentionStats {
  // Query-key dot products evaluated, counted once per head.
  std::uint64_t pairwise_scores = 0;
};

// Per-head projections are packed: qkv.w is [D, 3D] whose column block
// [part*D + i*d_k, part*D + (i+1)*d_k) is W_i^Q, W_i^K or W_i^V (part 0/1/2).
// out.w is W^O with shape [h*d_v, D].
struct MultiHeadAttention {
  Linear qkv, out;
  std::size_t dim = 0, heads = 1;

  template <class T>
  static MultiHeadAttention create(ParamStore<T>& ps, Rng& rng, const std::string& name,
                                   std::size_t dim, std::size_t heads);

  std::size_t head_dim() const { return dim / heads; }

  // Attention restricted to each window of `spec` over x: [H*W, D].
  template <class T>
  BasicTensor<T> operator()(ParamSet<T> p, const BasicTensor<T>& x, const TokenGrid& grid,
                            const WindowSpec& spec, AttentionStats* stats = nullptr) const;
};

// Pre-norm residual unit: x + MHA(LN(x)), then x + MLP(LN(x)).
struct AttentionBlock {
  WindowSpec spec;
  LayerNormParams norm1, norm2;
  MultiHeadAttention attn;
  Mlp mlp;

  template <class T>
  static AttentionBlock create(ParamStore<T>& ps, Rng& rng, const std::string& name,
                               const WindowSpec& spec, std::size_t dim, std::size_t heads,
                               std::size_t mlp_hidden);

  template <class T>
  BasicTensor<T> operator()(ParamSet<T> p, const BasicTensor<T>& x, const TokenGrid& grid,
                            AttentionStats* stats = nullptr) const;
};

struct ActConfig {
  TokenGrid grid;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_hidden = 128;
  // Square, east-west, north-south, applied in that order.
  WindowSpec square, east_west, north_south;
  // Number of (ACT triple + global MHA) stages.
  std::size_t depth = 1;

  void validate() const;
};

// One stage is the three window blocks followed by one global block.
struct ActStack {
  ActConfig cfg;
  std::vector<AttentionBlock> blocks;

  template <class T>
  static ActStack create(ParamStore<T>& ps, Rng& rng, const std::string& name,
                         const ActConfig& cfg);

  template <class T>
  BasicTensor<T> operator()(ParamSet<T> p, const BasicTensor<T>& x,
                            AttentionStats* stats = nullptr) const;
};

}  // namespace cvc
