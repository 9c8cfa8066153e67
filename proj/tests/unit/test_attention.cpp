#include <cmath>
#include <set>

#include "cvc/attention.hpp"
#include "cvc/ops.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"

using namespace cvc;
using cvc::testing::random_tensor;

namespace {

const TokenGrid kDesk{8, 16};

ActConfig desk_config(std::size_t dim = 16, std::size_t heads = 4) {
  ActConfig c;
  c.grid = kDesk;
  c.dim = dim;
  c.heads = heads;
  c.mlp_hidden = 2 * dim;
  c.square = WindowSpec::make(4, 4, WindowKind::square);
  c.east_west = WindowSpec::make(2, 8, WindowKind::east_west);
  c.north_south = WindowSpec::make(8, 2, WindowKind::north_south);
  return c;
}

// Direct triple loop: softmax(Q K^T / sqrt(d)) V.
std::vector<double> brute_attention(const std::vector<double>& q, const std::vector<double>& k,
                                    const std::vector<double>& v, std::size_t n, std::size_t d) {
  std::vector<double> out(n * d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(n);
    double mx = -1e300;
    for (std::size_t j = 0; j < n; ++j) {
      double dot = 0;
      for (std::size_t t = 0; t < d; ++t) dot += q[i * d + t] * k[j * d + t];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0;
    for (auto& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t t = 0; t < d; ++t) out[i * d + t] += s[j] / z * v[j * d + t];
  }
  return out;
}

std::vector<double> to_vec(const TensorD& t) { return {t.data().begin(), t.data().end()}; }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Indices of tokens sharing a window with `token`.
std::set<std::size_t> window_members(const TokenGrid& g, const WindowSpec& s, std::size_t token) {
  const std::size_t y = token / g.width, x = token % g.width;
  const std::size_t y0 = y / s.win_h * s.win_h, x0 = x / s.win_w * s.win_w;
  std::set<std::size_t> m;
  for (std::size_t dy = 0; dy < s.win_h; ++dy)
    for (std::size_t dx = 0; dx < s.win_w; ++dx) m.insert((y0 + dy) * g.width + x0 + dx);
  return m;
}

}  // namespace

TEST_CASE("window specs enforce aspect consistency") {
  CHECK_NOTHROW(WindowSpec::make(4, 4, WindowKind::square));
  CHECK_NOTHROW(WindowSpec::make(2, 8, WindowKind::east_west));
  CHECK_NOTHROW(WindowSpec::make(8, 2, WindowKind::north_south));
  CHECK_THROWS_AS(WindowSpec::make(4, 2, WindowKind::square), ConfigError);
  CHECK_THROWS_AS(WindowSpec::make(8, 2, WindowKind::east_west), ConfigError);
  CHECK_THROWS_AS(WindowSpec::make(4, 4, WindowKind::north_south), ConfigError);
  CHECK_THROWS_AS(WindowSpec::make(0, 4, WindowKind::east_west), ConfigError);
}

TEST_CASE("window counts on the desk grid") {
  CHECK(WindowSpec::make(4, 4, WindowKind::square).count(kDesk) == 8);
  CHECK(WindowSpec::make(2, 8, WindowKind::east_west).count(kDesk) == 8);
  CHECK(WindowSpec::make(8, 2, WindowKind::north_south).count(kDesk) == 8);
  CHECK(WindowSpec::global(kDesk).count(kDesk) == 1);
}

TEST_CASE("non-dividing windows are rejected") {
  const TokenGrid full{32, 64};
  CHECK_THROWS_AS(check_tiles(full, WindowSpec::make(24, 24, WindowKind::square)), ConfigError);
  CHECK_THROWS_AS(check_tiles(full, WindowSpec::make(12, 48, WindowKind::east_west)), ConfigError);
  CHECK_THROWS_AS(check_tiles(full, WindowSpec::make(48, 12, WindowKind::north_south)),
                  ConfigError);
  auto cfg = desk_config();
  cfg.square = WindowSpec::make(3, 3, WindowKind::square);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("partition is row-major by window and within window; merge inverts it bitwise") {
  Rng rng(1);
  auto x = cvc::testing::random_tensor_f({kDesk.tokens(), 5}, rng);
  for (auto spec : {WindowSpec::make(4, 4, WindowKind::square),
                    WindowSpec::make(2, 8, WindowKind::east_west),
                    WindowSpec::make(8, 2, WindowKind::north_south), WindowSpec::global(kDesk)}) {
    CAPTURE(to_string(spec.kind));
    auto w = window_partition(x, kDesk, spec);
    CHECK(w.shape() == Shape{spec.count(kDesk), spec.tokens(), 5});
    auto back = window_merge(w, kDesk, spec);
    CHECK(std::equal(x.data().begin(), x.data().end(), back.data().begin()));

    const auto order = window_token_order(kDesk, spec);
    CHECK(std::set<std::size_t>(order.begin(), order.end()).size() == kDesk.tokens());
  }
  // Second window of the 2x8 tiling starts at column 8 of row 0; its second
  // row starts at token 16 + 8.
  auto ew = window_token_order(kDesk, WindowSpec::make(2, 8, WindowKind::east_west));
  CHECK(ew[16] == 8);
  CHECK(ew[24] == 24);
}

TEST_CASE("attention: single token returns its value row") {
  auto q = TensorD::from_data({1, 3}, {0.3, -1, 2});
  auto k = TensorD::from_data({1, 3}, {5, 4, 1});
  auto v = TensorD::from_data({1, 3}, {7, 8, 9});
  auto o = attention(q, k, v);
  for (std::size_t i = 0; i < 3; ++i) CHECK(o.at(i) == doctest::Approx(v.at(i)).epsilon(1e-12));
}

TEST_CASE("attention: hard-attention limit with orthogonal keys") {
  const double big = 60.0;
  std::vector<double> kd(16, 0.0);
  for (std::size_t i = 0; i < 4; ++i) kd[i * 4 + i] = big;
  auto k = TensorD::from_data({4, 4}, kd);
  Rng rng(2);
  auto v = random_tensor({4, 3}, rng);
  auto o = attention(k, k, v);
  CHECK(max_abs_diff(o.data(), v.data()) < 1e-3);
}

TEST_CASE("attention: matches a brute-force loop on random 5x4 inputs") {
  Rng rng(3);
  auto q = random_tensor({5, 4}, rng), k = random_tensor({5, 4}, rng), v = random_tensor({5, 4}, rng);
  auto o = attention(q, k, v);
  auto ref = brute_attention(to_vec(q), to_vec(k), to_vec(v), 5, 4);
  CHECK(max_abs_diff(o.data(), ref) < 1e-6);
}

TEST_CASE("attention weights are convex combinations") {
  Rng rng(4);
  auto q = random_tensor({2, 6, 4}, rng, 3.0), k = random_tensor({2, 6, 4}, rng, 3.0);
  auto w = softmax(scale(matmul(q, k, true), 0.5), 2);
  for (std::size_t r = 0; r < 12; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < 6; ++j) {
      CHECK(w.at(r * 6 + j) >= 0.0);
      s += w.at(r * 6 + j);
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}

TEST_CASE("multi-head attention matches per-head brute-force composition") {
  for (std::size_t heads : {1u, 2u, 4u}) {
    CAPTURE(heads);
    Rng rng(5 + heads);
    ParamStore<double> ps;
    const std::size_t n = 6, d = 8, dk = d / heads;
    auto mha = MultiHeadAttention::create(ps, rng, "mha", d, heads);
    // Non-zero biases so their placement is exercised too.
    for (auto id : {mha.qkv.b, mha.out.b})
      for (auto& b : ps[id].mutable_data()) b = rng.normal(0.0, 0.3);
    auto x = random_tensor({n, d}, rng);
    const TokenGrid line{1, n};
    auto y = mha(ps.view(), x, line, WindowSpec::global(line));
    REQUIRE(y.shape() == Shape{n, d});

    const auto xv = to_vec(x);
    const auto wq = ps[mha.qkv.w].data(), bq = ps[mha.qkv.b].data();
    const auto wo = ps[mha.out.w].data(), bo = ps[mha.out.b].data();
    std::vector<double> concat(n * d);
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> q(n * dk), k(n * dk), v(n * dk);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < dk; ++t) {
          double a[3] = {0, 0, 0};
          for (std::size_t part = 0; part < 3; ++part) {
            const std::size_t col = part * d + h * dk + t;
            a[part] = bq[col];
            for (std::size_t j = 0; j < d; ++j) a[part] += xv[i * d + j] * wq[j * 3 * d + col];
          }
          q[i * dk + t] = a[0];
          k[i * dk + t] = a[1];
          v[i * dk + t] = a[2];
        }
      auto hv = brute_attention(q, k, v, n, dk);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t t = 0; t < dk; ++t) concat[i * d + h * dk + t] = hv[i * dk + t];
    }
    std::vector<double> ref(n * d);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < d; ++o) {
        double s = bo[o];
        for (std::size_t j = 0; j < d; ++j) s += concat[i * d + j] * wo[j * d + o];
        ref[i * d + o] = s;
      }
    CHECK(max_abs_diff(y.data(), ref) < 1e-6);
  }
}

TEST_CASE("multi-head attention rejects bad head counts") {
  Rng rng(9);
  ParamStore<float> ps;
  CHECK_THROWS_AS(MultiHeadAttention::create(ps, rng, "m", 10, 4), ConfigError);
}

TEST_CASE("window attention is local; global attention is not") {
  Rng rng(10);
  ParamStore<double> ps;
  const std::size_t d = 8;
  auto x = random_tensor({kDesk.tokens(), d}, rng);
  for (auto spec : {WindowSpec::make(4, 4, WindowKind::square),
                    WindowSpec::make(2, 8, WindowKind::east_west),
                    WindowSpec::make(8, 2, WindowKind::north_south)}) {
    CAPTURE(to_string(spec.kind));
    auto block = AttentionBlock::create(ps, rng, "b" + to_string(spec.kind), spec, d, 2, 16);
    auto base = block(ps.view(), x, kDesk);
    const std::size_t probe_token = 37;
    const auto members = window_members(kDesk, spec, probe_token);
    auto xs = to_vec(x);
    // A uniform shift would be cancelled by the layernorm, so vary it per feature.
    for (std::size_t j = 0; j < d; ++j) xs[probe_token * d + j] += 0.5 * static_cast<double>(j % 3) - 0.4;
    auto moved = block(ps.view(), TensorD::from_data(x.shape(), xs), kDesk);
    std::size_t changed = 0;
    for (std::size_t t = 0; t < kDesk.tokens(); ++t) {
      bool same = true;
      for (std::size_t j = 0; j < d; ++j) same &= base.at(t * d + j) == moved.at(t * d + j);
      if (members.count(t)) {
        changed += !same;
      } else {
        CHECK(same);  // exact: outside tokens never see the perturbation
      }
    }
    CHECK(changed == members.size());
  }

  auto global = AttentionBlock::create(ps, rng, "g", WindowSpec::global(kDesk), d, 2, 16);
  auto base = global(ps.view(), x, kDesk);
  auto xs = to_vec(x);
  for (std::size_t j = 0; j < d; ++j) xs[5 * d + j] += 0.5 * static_cast<double>(j % 3) - 0.4;
  auto moved = global(ps.view(), TensorD::from_data(x.shape(), xs), kDesk);
  for (std::size_t t = 0; t < kDesk.tokens(); ++t) {
    double diff = 0;
    for (std::size_t j = 0; j < d; ++j) diff += std::abs(base.at(t * d + j) - moved.at(t * d + j));
    CHECK(diff > 0.0);
  }
}

TEST_CASE("ACT stack preserves shape and is the identity with zero residual projections") {
  Rng rng(11);
  ParamStore<float> ps;
  auto cfg = desk_config(16, 4);
  cfg.depth = 2;
  auto stack = ActStack::create(ps, rng, "enc", cfg);
  CHECK(stack.blocks.size() == 8);
  CHECK(stack.blocks[0].spec.kind == WindowKind::square);
  CHECK(stack.blocks[1].spec.kind == WindowKind::east_west);
  CHECK(stack.blocks[2].spec.kind == WindowKind::north_south);
  CHECK(stack.blocks[3].spec.kind == WindowKind::global);
  CHECK(ps.find("enc.stage1.east-west.attn.qkv.w").has_value());

  auto x = cvc::testing::random_tensor_f({kDesk.tokens(), 16}, rng);
  auto y = stack(ps.view(), x);
  CHECK(y.shape() == x.shape());

  for (const auto& b : stack.blocks)
    for (auto id : {b.attn.out.w, b.attn.out.b, b.mlp.fc2.w, b.mlp.fc2.b})
      for (auto& v : ps[id].mutable_data()) v = 0.0f;
  auto id = stack(ps.view(), x);
  CHECK(std::equal(x.data().begin(), x.data().end(), id.data().begin()));
}

TEST_CASE("pairwise score count is linear in tokens for fixed windows") {
  Rng rng(12);
  ParamStore<float> ps;
  auto cfg = desk_config(8, 2);
  auto stack = ActStack::create(ps, rng, "s", cfg);
  AttentionStats stats;
  stack(ps.view(), Tensor::zeros({kDesk.tokens(), 8}), &stats);
  const std::uint64_t n = kDesk.tokens();
  // Three window sub-blocks of 8 windows with 16 tokens each, plus one global.
  CHECK(stats.pairwise_scores == 3 * 8 * 16 * 16 + n * n);

  // Doubling the grid doubles the window-attention share exactly.
  auto big = cfg;
  big.grid = TokenGrid{16, 16};
  ParamStore<float> ps2;
  auto stack2 = ActStack::create(ps2, rng, "s", big);
  AttentionStats s2;
  stack2(ps2.view(), Tensor::zeros({big.grid.tokens(), 8}), &s2);
  CHECK(s2.pairwise_scores - 256ull * 256 == 2 * (stats.pairwise_scores - n * n));
}

TEST_CASE("ACT block gradients match finite differences") {
  Rng rng(13);
  ParamStore<double> ps;
  const TokenGrid g{4, 4};
  auto block = AttentionBlock::create(ps, rng, "b", WindowSpec::make(2, 2, WindowKind::square), 4,
                                      2, 8);
  auto x = random_tensor({16, 4}, rng);
  std::vector<TensorD> inputs{x};
  for (std::size_t i = 0; i < ps.size(); ++i) inputs.push_back(ps[i]);
  auto r = cvc::testing::grad_check(
      [&](const std::vector<TensorD>& in) {
        std::vector<TensorD> params(in.begin() + 1, in.end());
        return cvc::testing::probe(block(ParamSet<double>(params), in[0], g));
      },
      inputs);
  CHECK(r.max_rel_error < 1e-4);
}
