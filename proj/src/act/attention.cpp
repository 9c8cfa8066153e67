#include "cvc/attention.hpp"

#include <cmath>

namespace cvc {

std::string to_string(WindowKind k) {
  switch (k) {
    case WindowKind::square: return "square";
    case WindowKind::east_west: return "east-west";
    case WindowKind::north_south: return "north-south";
    case WindowKind::global: return "global";
  }
  return "?";
}

WindowSpec WindowSpec::make(std::size_t win_h, std::size_t win_w, WindowKind kind) {
  if (win_h == 0 || win_w == 0) throw ConfigError("window extents must be positive");
  const std::string shape = std::to_string(win_h) + "x" + std::to_string(win_w);
  switch (kind) {
    case WindowKind::square:
      if (win_h != win_w) throw ConfigError("square window must have win_h == win_w, got " + shape);
      break;
    case WindowKind::east_west:
      if (win_w <= win_h) throw ConfigError("east-west window must be wider than tall, got " + shape);
      break;
    case WindowKind::north_south:
      if (win_h <= win_w) throw ConfigError("north-south window must be taller than wide, got " + shape);
      break;
    case WindowKind::global: break;
  }
  return WindowSpec{win_h, win_w, kind};
}

WindowSpec WindowSpec::global(const TokenGrid& grid) {
  return WindowSpec{grid.height, grid.width, WindowKind::global};
}

void check_tiles(const TokenGrid& grid, const WindowSpec& spec) {
  if (spec.win_h == 0 || spec.win_w == 0 || grid.height % spec.win_h != 0 ||
      grid.width % spec.win_w != 0)
    throw ConfigError(to_string(spec.kind) + " window " + std::to_string(spec.win_h) + "x" +
                      std::to_string(spec.win_w) + " does not tile the " +
                      std::to_string(grid.height) + "x" + std::to_string(grid.width) +
                      " token grid");
}

std::vector<std::size_t> window_token_order(const TokenGrid& grid, const WindowSpec& spec) {
  check_tiles(grid, spec);
  const std::size_t nwy = grid.height / spec.win_h, nwx = grid.width / spec.win_w;
  std::vector<std::size_t> order;
  order.reserve(grid.tokens());
  for (std::size_t wy = 0; wy < nwy; ++wy)
    for (std::size_t wx = 0; wx < nwx; ++wx)
      for (std::size_t dy = 0; dy < spec.win_h; ++dy)
        for (std::size_t dx = 0; dx < spec.win_w; ++dx)
          order.push_back((wy * spec.win_h + dy) * grid.width + wx * spec.win_w + dx);
  return order;
}

template <class T>
BasicTensor<T> window_partition(const BasicTensor<T>& tokens, const TokenGrid& grid,
                                const WindowSpec& spec) {
  if (tokens.rank() != 2 || tokens.dim(0) != grid.tokens())
    throw DimensionError("window_partition: expected [" + std::to_string(grid.tokens()) +
                         ", D], got " + shape_str(tokens.shape()));
  const std::size_t d = tokens.dim(1);
  const auto order = window_token_order(grid, spec);
  std::vector<std::size_t> index(order.size() * d);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) index[i * d + j] = order[i] * d + j;
  return gather(tokens, std::move(index), {spec.count(grid), spec.tokens(), d});
}

template <class T>
BasicTensor<T> window_merge(const BasicTensor<T>& windows, const TokenGrid& grid,
                            const WindowSpec& spec) {
  if (windows.rank() != 3 || windows.dim(0) != spec.count(grid) || windows.dim(1) != spec.tokens())
    throw DimensionError("window_merge: unexpected shape " + shape_str(windows.shape()));
  const std::size_t d = windows.dim(2);
  const auto order = window_token_order(grid, spec);
  std::vector<std::size_t> index(order.size() * d);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) index[order[i] * d + j] = i * d + j;
  return gather(windows, std::move(index), {grid.tokens(), d});
}

template <class T>
BasicTensor<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                         const BasicTensor<T>& v) {
  const std::size_t dk = q.shape().back();
  auto scores = scale(matmul(q, k, /*transpose_b=*/true), T(1) / std::sqrt(static_cast<T>(dk)));
  return matmul(softmax(scores, scores.rank() - 1), v);
}

template <class T>
MultiHeadAttention MultiHeadAttention::create(ParamStore<T>& ps, Rng& rng,
                                              const std::string& name, std::size_t dim,
                                              std::size_t heads) {
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  MultiHeadAttention m;
  m.dim = dim;
  m.heads = heads;
  m.qkv = Linear::create(ps, rng, name + ".qkv", dim, 3 * dim);
  m.out = Linear::create(ps, rng, name + ".out", dim, dim);
  return m;
}

template <class T>
BasicTensor<T> MultiHeadAttention::operator()(ParamSet<T> p, const BasicTensor<T>& x,
                                              const TokenGrid& grid, const WindowSpec& spec,
                                              AttentionStats* stats) const {
  if (x.rank() != 2 || x.dim(0) != grid.tokens() || x.dim(1) != dim)
    throw DimensionError("multi_head_attention: expected [" + std::to_string(grid.tokens()) +
                         ", " + std::to_string(dim) + "], got " + shape_str(x.shape()));
  const auto order = window_token_order(grid, spec);
  const std::size_t nw = spec.count(grid), len = spec.tokens(), dk = head_dim();
  const std::size_t batch = nw * heads;

  auto packed = qkv(p, x);  // [N, 3D]
  // Split into per-(window, head) sequences: [nw*h, L, d_k].
  auto split = [&](std::size_t part) {
    std::vector<std::size_t> index(batch * len * dk);
    std::size_t o = 0;
    for (std::size_t w = 0; w < nw; ++w)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t row = order[w * len + l] * 3 * dim + part * dim + h * dk;
          for (std::size_t j = 0; j < dk; ++j) index[o++] = row + j;
        }
    return gather(packed, std::move(index), {batch, len, dk});
  };
  auto heads_out = attention(split(0), split(1), split(2));  // [nw*h, L, d_k]
  if (stats) stats->pairwise_scores += static_cast<std::uint64_t>(nw) * len * len;

  // Concatenate heads back into token rows: [N, h*d_k].
  std::vector<std::size_t> index(grid.tokens() * dim);
  for (std::size_t w = 0; w < nw; ++w)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t l = 0; l < len; ++l) {
        const std::size_t dst = order[w * len + l] * dim + h * dk;
        const std::size_t src = ((w * heads + h) * len + l) * dk;
        for (std::size_t j = 0; j < dk; ++j) index[dst + j] = src + j;
      }
  return out(p, gather(heads_out, std::move(index), {grid.tokens(), dim}));
}

template <class T>
AttentionBlock AttentionBlock::create(ParamStore<T>& ps, Rng& rng, const std::string& name,
                                      const WindowSpec& spec, std::size_t dim, std::size_t heads,
                                      std::size_t mlp_hidden) {
  AttentionBlock b;
  b.spec = spec;
  b.norm1 = LayerNormParams::create(ps, name + ".ln1", dim);
  b.attn = MultiHeadAttention::create(ps, rng, name + ".attn", dim, heads);
  b.norm2 = LayerNormParams::create(ps, name + ".ln2", dim);
  b.mlp = Mlp::create(ps, rng, name + ".mlp", dim, mlp_hidden);
  return b;
}

template <class T>
BasicTensor<T> AttentionBlock::operator()(ParamSet<T> p, const BasicTensor<T>& x,
                                          const TokenGrid& grid, AttentionStats* stats) const {
  auto h = add(x, attn(p, norm1(p, x), grid, spec, stats));
  return add(h, mlp(p, norm2(p, h)));
}

void ActConfig::validate() const {
  if (grid.height == 0 || grid.width == 0) throw ConfigError("ACT: empty token grid");
  if (heads == 0 || dim % heads != 0)
    throw ConfigError("ACT: token dim " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  if (square.kind != WindowKind::square || east_west.kind != WindowKind::east_west ||
      north_south.kind != WindowKind::north_south)
    throw ConfigError("ACT: window kinds must be square, east-west, north-south");
  for (const auto* s : {&square, &east_west, &north_south}) {
    WindowSpec::make(s->win_h, s->win_w, s->kind);
    check_tiles(grid, *s);
  }
  if (depth == 0) throw ConfigError("ACT: depth must be at least 1");
}

template <class T>
ActStack ActStack::create(ParamStore<T>& ps, Rng& rng, const std::string& name,
                          const ActConfig& cfg) {
  cfg.validate();
  ActStack s;
  s.cfg = cfg;
  const WindowSpec specs[4] = {cfg.square, cfg.east_west, cfg.north_south,
                               WindowSpec::global(cfg.grid)};
  for (std::size_t d = 0; d < cfg.depth; ++d)
    for (std::size_t i = 0; i < 4; ++i)
      s.blocks.push_back(AttentionBlock::create(
          ps, rng, name + ".stage" + std::to_string(d) + "." + to_string(specs[i].kind), specs[i],
          cfg.dim, cfg.heads, cfg.mlp_hidden));
  return s;
}

template <class T>
BasicTensor<T> ActStack::operator()(ParamSet<T> p, const BasicTensor<T>& x,
                                    AttentionStats* stats) const {
  auto h = x;
  for (const auto& b : blocks) h = b(p, h, cfg.grid, stats);
  return h;
}

#define CVC_INSTANTIATE_ACT(T)                                                                  \
  template BasicTensor<T> window_partition(const BasicTensor<T>&, const TokenGrid&,             \
                                           const WindowSpec&);                                  \
  template BasicTensor<T> window_merge(const BasicTensor<T>&, const TokenGrid&,                 \
                                       const WindowSpec&);                                      \
  template BasicTensor<T> attention(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                    const BasicTensor<T>&);                                     \
  template MultiHeadAttention MultiHeadAttention::create(ParamStore<T>&, Rng&,                  \
                                                         const std::string&, std::size_t,       \
                                                         std::size_t);                          \
  template BasicTensor<T> MultiHeadAttention::operator()(                                       \
      ParamSet<T>, const BasicTensor<T>&, const TokenGrid&, const WindowSpec&, AttentionStats*) \
      const;                                                                                    \
  template AttentionBlock AttentionBlock::create(ParamStore<T>&, Rng&, const std::string&,      \
                                                 const WindowSpec&, std::size_t, std::size_t,   \
                                                 std::size_t);                                  \
  template BasicTensor<T> AttentionBlock::operator()(ParamSet<T>, const BasicTensor<T>&,        \
                                                     const TokenGrid&, AttentionStats*) const;  \
  template ActStack ActStack::create(ParamStore<T>&, Rng&, const std::string&,                  \
                                     const ActConfig&);                                         \
  template BasicTensor<T> ActStack::operator()(ParamSet<T>, const BasicTensor<T>&,              \
                                               AttentionStats*) const;

CVC_INSTANTIATE_ACT(float)
CVC_INSTANTIATE_ACT(double)

}  // namespace cvc
