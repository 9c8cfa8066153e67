#include <cmath>
#include <filesystem>
#include <fstream>

#include "cvc/ops.hpp"
#include "cvc/train.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support/gradcheck.hpp"

using namespace cvc;
using cvc::testing::random_tensor_f;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.channels = 2;
  c.height = 8;
  c.width = 16;
  c.patch = 2;
  c.dim = 8;
  c.heads = 2;
  c.mlp_hidden = 8;
  c.win_square = 2;
  c.ew_h = 2, c.ew_w = 4, c.ns_h = 4, c.ns_w = 2;
  c.latent_channels = 2;
  c.hyper_patch = 2;
  c.hyper_dim = 8;
  c.hyper_heads = 2;
  c.hyper_mlp_hidden = 8;
  c.hyper_channels = 2;
  return c;
}

std::vector<Tensor> examples(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_tensor_f({2, 8, 16}, rng));
  return out;
}

TrainConfig short_run(Phase phase) {
  TrainConfig t;
  t.phase = phase;
  t.steps = 12;
  t.warmup = 2;
  t.batch = 2;
  t.lr = 1e-3;
  t.validate_every = 4;
  t.checkpoint_every = 4;
  return t;
}

std::vector<std::vector<float>> values(const ParamStore<float>& ps) {
  std::vector<std::vector<float>> v;
  for (std::size_t i = 0; i < ps.size(); ++i) v.emplace_back(ps[i].data().begin(), ps[i].data().end());
  return v;
}

std::filesystem::path scratch(const char* name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("learning rate schedule endpoints and cosine midpoint") {
  TrainConfig c;
  c.lr = 2e-4;
  c.warmup = 100;
  c.steps = 1100;
  CHECK(lr_schedule(0, c) == 0.0);
  CHECK(lr_schedule(50, c) == doctest::Approx(1e-4));
  CHECK(lr_schedule(100, c) == doctest::Approx(2e-4));
  CHECK(lr_schedule(600, c) == doctest::Approx(1e-4));
  CHECK(lr_schedule(1100, c) == doctest::Approx(0.0));
  for (std::size_t s = 101; s <= 1100; ++s) CHECK(lr_schedule(s, c) <= lr_schedule(s - 1, c));
}

TEST_CASE("AdamW converges on a scalar quadratic") {
  ParamStore<float> ps;
  ps.add("x", Tensor::full({1}, 5.0f));
  AdamW opt;
  for (int step = 0; step < 500; ++step) {
    ps.zero_grad();
    auto g = ps[0].mutable_grad();
    g[0] = 2.0f * (ps[0].at(0) - 1.5f);  // d/dx (x - 1.5)^2
    opt.step(ps, {true}, 0.05, 0.0);
  }
  CHECK(ps[0].at(0) == doctest::Approx(1.5).epsilon(1e-2));
}

TEST_CASE("AdamW leaves parameters alone without gradient or decay") {
  ParamStore<float> ps;
  ps.add("x", Tensor::full({3}, 2.0f));
  AdamW opt;
  ps[0].mutable_grad();
  opt.step(ps, {true}, 0.1, 0.0);
  for (float v : ps[0].data()) CHECK(v == 2.0f);
}

TEST_CASE("decoupled weight decay shrinks geometrically") {
  ParamStore<float> ps;
  ps.add("x", Tensor::full({1}, 1.0f));
  AdamW opt;
  const double lr = 0.1, wd = 0.5;
  for (int step = 0; step < 10; ++step) {
    ps.zero_grad();
    ps[0].mutable_grad();
    opt.step(ps, {true}, lr, wd);
  }
  CHECK(ps[0].at(0) == doctest::Approx(std::pow(1 - lr * wd, 10)).epsilon(1e-5));
}

TEST_CASE("gradient clipping bounds the global norm") {
  ParamStore<float> ps;
  ps.add("a", Tensor::zeros({2}));
  ps.add("b", Tensor::zeros({1}));
  auto ga = ps[0].mutable_grad();
  ga[0] = 3;
  ga[1] = 0;
  ps[1].mutable_grad()[0] = 4;
  CHECK(clip_grad_norm(ps, {true, true}, 1.0) == doctest::Approx(5.0));
  CHECK(ps[0].grad()[0] == doctest::Approx(0.6));
  CHECK(ps[1].grad()[0] == doctest::Approx(0.8));
  CHECK(clip_grad_norm(ps, {true, true}, 10.0) == doctest::Approx(1.0));
}

TEST_CASE("loss components sum to the total") {
  VaeFormer<float> m(tiny_config());
  const auto xs = examples(1, 2);
  Rng rng(1);
  const auto pre = pretrain_forward(m, m.params().view(), xs[0], 0.3, &rng).parts;
  CHECK(pre.distortion + pre.kl == doctest::Approx(pre.total).epsilon(1e-5));
  CHECK(pre.kl == doctest::Approx(0.3 * pre.kl_raw));
  const auto rd = rd_forward(m, m.params().view(), xs[0], 2.0, &rng).parts;
  CHECK(rd.rate_y + rd.rate_z + rd.distortion == doctest::Approx(rd.total).epsilon(1e-5));
  CHECK(rd.rate_y == doctest::Approx(2.0 * rd.bits_y));
}

TEST_CASE("loss examples and linearity in lambda") {
  auto x = Tensor::full({1, 2, 2}, 0.5f);
  GaussianField<float> q{Tensor::zeros({1, 1, 1}), Tensor::full({1, 1, 1}, 1.0f)};
  CHECK(pretrain_loss(x, x, q, 1.0).total.item() == 0.0f);
  auto x_hat = Tensor::zeros({1, 2, 2});
  // Without KL the pretrain loss is half the squared error.
  CHECK(pretrain_loss(x, x_hat, q, 0.0).total.item() == doctest::Approx(0.5));
  auto by = Tensor::scalar(10.0f), bz = Tensor::scalar(3.0f);
  const auto l1 = rd_loss(x, x_hat, by, bz, 1.0).parts;
  const auto l2 = rd_loss(x, x_hat, by, bz, 2.0).parts;
  CHECK(l2.rate_y == 2 * l1.rate_y);
  CHECK(l2.rate_z == l1.rate_z);
  CHECK(l2.distortion == l1.distortion);
  CHECK(rd_loss(x, x_hat, by, bz, 1e-30).parts.total == doctest::Approx(3.0 + 1.0));
}

TEST_CASE("phase masks select parameter groups") {
  VaeFormer<float> m(tiny_config());
  const auto& ps = m.params();
  const auto pre = trainable_mask(ps, Phase::pretrain);
  const auto fine = trainable_mask(ps, Phase::finetune);
  const auto joint = trainable_mask(ps, Phase::joint);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto g = ps.group(i);
    INFO(ps.name(i));
    CHECK(pre[i] == (g == "enc" || g == "dec"));
    CHECK(fine[i] == (g != "enc" && g != "latent_prior"));
    CHECK(joint[i] == (g != "latent_prior"));
  }
}

TEST_CASE("finetune keeps the encoder bitwise frozen and logs zero encoder gradient") {
  VaeFormer<float> m(tiny_config());
  const auto before = values(m.params());
  const auto data = examples(6, 3), val = examples(2, 4);
  std::vector<std::string> lines;
  RunOptions o;
  o.log_line = [&](const std::string& l) { lines.push_back(l); };
  run_phase(short_run(Phase::finetune), m, data, val, o);
  const auto after = values(m.params());
  bool other_changed = false;
  for (std::size_t i = 0; i < after.size(); ++i) {
    const auto g = m.params().group(i);
    if (g == "enc") CHECK(after[i] == before[i]);
    else if (after[i] != before[i]) other_changed = true;
  }
  CHECK(other_changed);
  REQUIRE(lines.size() == 12);
  for (const auto& l : lines) {
    const auto j = nlohmann::json::parse(l);
    CHECK(j["group_grad_norm"]["enc"].get<double>() == 0.0);
    const double sum = j["distortion"].get<double>() + j["kl"].get<double>() +
                       j["rate_y"].get<double>() + j["rate_z"].get<double>();
    CHECK(sum == doctest::Approx(j["loss"].get<double>()).epsilon(1e-5));
  }
}

TEST_CASE("training trajectory is bitwise reproducible and independent of thread count") {
  const auto data = examples(6, 5), val = examples(2, 6);
  auto run = [&](std::size_t threads) {
    VaeFormer<float> m(tiny_config());
    auto cfg = short_run(Phase::pretrain);
    cfg.threads = threads;
    auto r = run_phase(cfg, m, data, val);
    return std::pair{r.train_loss, values(m.params())};
  };
  const auto a = run(1), b = run(1), c = run(2);
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
  CHECK(a.first == c.first);
  CHECK(a.second == c.second);
}

TEST_CASE("resuming from the last checkpoint reproduces an uninterrupted run") {
  const auto data = examples(6, 7), val = examples(2, 8);
  const auto dir_full = scratch("cvc_resume_full"), dir_part = scratch("cvc_resume_part");
  auto cfg = short_run(Phase::pretrain);

  VaeFormer<float> full(tiny_config());
  run_phase(cfg, full, data, val, {dir_full, false, {}});

  // The same run interrupted after step 8, right after its checkpoint.
  VaeFormer<float> part(tiny_config());
  std::vector<std::string> seen;
  RunOptions o{dir_part, false, [&](const std::string& l) {
                 seen.push_back(l);
                 if (seen.size() == 8) throw std::runtime_error("interrupted");
               }};
  CHECK_THROWS(run_phase(cfg, part, data, val, o));

  VaeFormer<float> resumed(tiny_config());
  resumed.load(load_checkpoint((dir_part / "last.ckpt").string()));
  run_phase(cfg, resumed, data, val, {dir_part, true, {}});
  CHECK(values(resumed.params()) == values(full.params()));

  const auto a = load_checkpoint((dir_full / "last.ckpt").string());
  const auto b = load_checkpoint((dir_part / "last.ckpt").string());
  CHECK(serialize_checkpoint(a) == serialize_checkpoint(b));
  std::filesystem::remove_all(dir_full);
  std::filesystem::remove_all(dir_part);
}

TEST_CASE("training reduces the loss in both phases") {
  const auto data = examples(8, 9), val = examples(2, 10);
  VaeFormer<float> m(tiny_config());
  auto cfg = short_run(Phase::pretrain);
  cfg.steps = 120;
  cfg.warmup = 10;
  cfg.lr = 3e-3;
  cfg.validate_every = 60;
  auto smooth = [](const std::vector<double>& v, bool head) {
    const std::size_t w = 20;
    double s = 0;
    for (std::size_t i = 0; i < w; ++i) s += head ? v[i] : v[v.size() - 1 - i];
    return s / w;
  };
  auto r = run_phase(cfg, m, data, val);
  CHECK(smooth(r.train_loss, false) < smooth(r.train_loss, true));
  cfg.phase = Phase::finetune;
  r = run_phase(cfg, m, data, val);
  CHECK(smooth(r.train_loss, false) < smooth(r.train_loss, true));
}

TEST_CASE("invalid training configurations are rejected") {
  auto c = short_run(Phase::pretrain);
  c.warmup = c.steps;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = short_run(Phase::pretrain);
  c.lambda = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(parse_phase("warmup"), ConfigError);
  VaeFormer<float> m(tiny_config());
  CHECK_THROWS_AS(run_phase(short_run(Phase::pretrain), m, {}, examples(1, 1)), DataError);
}
