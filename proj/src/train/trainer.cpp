#include <chrono>
#include <cmath>
#include <fstream>
#include <thread>

#include "json.hpp"

#include "cvc/train.hpp"

namespace cvc {
namespace {

using Json = nlohmann::json;

constexpr std::uint64_t kBatchStream = 0x6261746368ull;
constexpr std::uint64_t kNoiseStream = 0x6e6f697365ull;
constexpr std::uint64_t kValStream = 0x76616c6964ull;

Loss<float> phase_forward(const TrainConfig& cfg, const VaeFormer<float>& m, ParamSet<float> p,
                          const Tensor& x, Rng* rng) {
  if (cfg.phase == Phase::pretrain) return pretrain_forward(m, p, x, cfg.beta, rng);
  return rd_forward(m, p, x, cfg.lambda, rng);
}

void add_parts(LossParts& acc, const LossParts& p, double w) {
  acc.total += w * p.total;
  acc.distortion += w * p.distortion;
  acc.kl += w * p.kl;
  acc.rate_y += w * p.rate_y;
  acc.rate_z += w * p.rate_z;
  acc.kl_raw += w * p.kl_raw;
  acc.bits_y += w * p.bits_y;
  acc.bits_z += w * p.bits_z;
  acc.mse += w * p.mse;
}

Json parts_json(const LossParts& p) {
  return Json{{"loss", p.total},   {"distortion", p.distortion}, {"kl", p.kl},
              {"rate_y", p.rate_y}, {"rate_z", p.rate_z},         {"kl_raw", p.kl_raw},
              {"bits_y", p.bits_y}, {"bits_z", p.bits_z},         {"mse", p.mse}};
}

std::vector<std::vector<float>> snapshot(const ParamStore<float>& ps) {
  std::vector<std::vector<float>> s;
  for (std::size_t i = 0; i < ps.size(); ++i) s.emplace_back(ps[i].data().begin(), ps[i].data().end());
  return s;
}

void restore(ParamStore<float>& ps, const std::vector<std::vector<float>>& s) {
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto d = ps[i].mutable_data();
    std::copy(s[i].begin(), s[i].end(), d.begin());
  }
}

Checkpoint optimizer_state(const ParamStore<float>& ps, AdamW& opt, std::size_t step,
                           const PhaseResult& r) {
  Checkpoint c;
  c.meta = "step=" + std::to_string(step) + "\nadam_steps=" + std::to_string(opt.steps()) +
           "\nbest_step=" + std::to_string(r.best_step) + "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "best_val=%.17g\n", r.best_val);
  c.meta += buf;
  for (std::size_t i = 0; i < opt.first().size(); ++i) {
    if (opt.first()[i].empty()) continue;
    c.tensors.emplace_back("m." + ps.name(i), Tensor::from_data(ps[i].shape(), opt.first()[i]));
    c.tensors.emplace_back("v." + ps.name(i), Tensor::from_data(ps[i].shape(), opt.second()[i]));
  }
  return c;
}

std::size_t thread_count(const TrainConfig& cfg) {
  return std::max<std::size_t>(1, std::min(cfg.threads, cfg.batch));
}

}  // namespace

std::vector<bool> trainable_mask(const ParamStore<float>& ps, Phase phase) {
  std::vector<bool> mask(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto g = ps.group(i);
    if (g == "latent_prior") mask[i] = false;  // fitted in closed form
    else if (phase == Phase::pretrain) mask[i] = g == "enc" || g == "dec";
    else if (phase == Phase::finetune) mask[i] = g != "enc";
    else mask[i] = true;
  }
  return mask;
}

double clip_grad_norm(ParamStore<float>& ps, const std::vector<bool>& mask, double max_norm) {
  double sq = 0;
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (mask[i] && ps[i].has_grad())
      for (float g : ps[i].grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (norm > max_norm) {
    const double k = max_norm / norm;
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (mask[i] && ps[i].has_grad())
        for (auto& g : ps[i].mutable_grad()) g = static_cast<float>(g * k);
  }
  return norm;
}

void AdamW::step(ParamStore<float>& ps, const std::vector<bool>& trainable, double lr, double wd) {
  if (m_.size() != ps.size()) {
    m_.resize(ps.size());
    v_.resize(ps.size());
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!trainable[i]) continue;
    auto w = ps[i].mutable_data();
    if (m_[i].empty()) {
      m_[i].assign(w.size(), 0.0f);
      v_[i].assign(w.size(), 0.0f);
    }
    const bool has = ps[i].has_grad();
    auto g = ps[i].grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      const double m = beta1_ * m_[i][j] + (1 - beta1_) * gj;
      const double v = beta2_ * v_[i][j] + (1 - beta2_) * gj * gj;
      m_[i][j] = static_cast<float>(m);
      v_[i][j] = static_cast<float>(v);
      double p = w[j];
      p -= lr * wd * p;
      p -= lr * (m / c1) / (std::sqrt(v / c2) + eps_);
      w[j] = static_cast<float>(p);
    }
  }
}

double validation_loss(const TrainConfig& cfg, const VaeFormer<float>& model,
                       const std::vector<Tensor>& data) {
  if (data.empty()) throw DataError("validation set is empty");
  double total = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, kValStream, i));
    total += phase_forward(cfg, model, model.params().view(), data[i], &rng).parts.total;
  }
  return total / static_cast<double>(data.size());
}

PhaseResult run_phase(const TrainConfig& cfg, VaeFormer<float>& model,
                      const std::vector<Tensor>& train, const std::vector<Tensor>& val,
                      const RunOptions& opts) {
  cfg.validate();
  if (train.empty()) throw DataError("training set is empty");
  if (val.empty()) throw DataError("validation set is empty");
  auto& ps = model.params();
  const auto mask = trainable_mask(ps, cfg.phase);

  AdamW opt;
  PhaseResult result;
  result.best_val = INFINITY;
  std::size_t start = 0;
  std::vector<std::vector<float>> best = snapshot(ps);

  std::ofstream log;
  if (!opts.out_dir.empty()) {
    std::filesystem::create_directories(opts.out_dir);
    if (opts.resume && std::filesystem::exists(opts.out_dir / "last.state")) {
      model.load(load_checkpoint((opts.out_dir / "last.ckpt").string()));
      const auto st = load_checkpoint((opts.out_dir / "last.state").string());
      start = std::stoull(meta_value(st.meta, "step"));
      opt.set_steps(std::stoull(meta_value(st.meta, "adam_steps")));
      result.best_step = std::stoull(meta_value(st.meta, "best_step"));
      result.best_val = std::stod(meta_value(st.meta, "best_val"));
      opt.first().assign(ps.size(), {});
      opt.second().assign(ps.size(), {});
      for (std::size_t i = 0; i < ps.size(); ++i) {
        if (const Tensor* m = st.find("m." + ps.name(i))) {
          opt.first()[i].assign(m->data().begin(), m->data().end());
          const Tensor* v = st.find("v." + ps.name(i));
          if (!v) throw DataError("optimizer state is missing v." + ps.name(i));
          opt.second()[i].assign(v->data().begin(), v->data().end());
        }
      }
      if (std::filesystem::exists(opts.out_dir / "best.ckpt")) {
        VaeFormer<float> tmp(model.config());
        tmp.load(load_checkpoint((opts.out_dir / "best.ckpt").string()));
        best = snapshot(tmp.params());
      }
    }
    log.open(opts.out_dir / "train_log.jsonl", start > 0 ? std::ios::app : std::ios::trunc);
  }

  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t nthreads = thread_count(cfg);
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch);

  for (std::size_t step = start; step < cfg.steps; ++step) {
    const double lr = lr_schedule(step, cfg);
    Rng batch_rng(derive_seed(cfg.seed, kBatchStream, step));
    std::vector<std::size_t> idx(cfg.batch);
    for (auto& i : idx) i = batch_rng.below(train.size());

    // Per-example gradients, reduced afterwards in example order so the
    // result does not depend on the thread count.
    std::vector<std::vector<std::vector<float>>> grads(cfg.batch);
    std::vector<LossParts> parts(cfg.batch);
    std::vector<std::string> errors(nthreads);
    auto work = [&](std::size_t tid) {
      try {
        for (std::size_t b = tid; b < cfg.batch; b += nthreads) {
          auto shadow = ps.shadows();
          for (std::size_t i = 0; i < shadow.size(); ++i) shadow[i].set_requires_grad(mask[i]);
          Rng noise(derive_seed(cfg.seed, kNoiseStream, step, b));
          auto loss = phase_forward(cfg, model, ParamSet<float>(shadow), train[idx[b]], &noise);
          if (!std::isfinite(loss.parts.total))
            throw NumericalError("non-finite loss at step " + std::to_string(step) + " (example " +
                                 std::to_string(idx[b]) + ")");
          scale(loss.total, static_cast<float>(inv_batch)).backward();
          parts[b] = loss.parts;
          grads[b].resize(shadow.size());
          for (std::size_t i = 0; i < shadow.size(); ++i)
            if (mask[i] && shadow[i].has_grad())
              grads[b][i].assign(shadow[i].grad().begin(), shadow[i].grad().end());
        }
      } catch (const std::exception& e) {
        errors[tid] = e.what();
      }
    };
    if (nthreads == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(work, t);
      for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
      if (!e.empty()) throw NumericalError(e);

    ps.zero_grad();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!mask[i]) continue;
      auto g = ps[i].mutable_grad();
      for (std::size_t b = 0; b < cfg.batch; ++b)
        if (!grads[b][i].empty())
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += grads[b][i][j];
    }
    LossParts mean_parts;
    for (const auto& p : parts) add_parts(mean_parts, p, inv_batch);

    std::map<std::string, double> group_sq;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      double s = 0;
      if (ps[i].has_grad())
        for (float g : ps[i].grad()) s += static_cast<double>(g) * g;
      group_sq[ps.group(i)] += s;
    }
    const double norm = clip_grad_norm(ps, mask, cfg.clip);
    opt.step(ps, mask, lr, cfg.weight_decay);
    result.train_loss.push_back(mean_parts.total);
    result.steps_run = step + 1;

    Json rec = parts_json(mean_parts);
    rec["step"] = step;
    rec["phase"] = to_string(cfg.phase);
    rec["lr"] = lr;
    rec["grad_norm"] = norm;
    Json groups = Json::object();
    for (const auto& [g, s] : group_sq) groups[g] = std::sqrt(s);
    rec["group_grad_norm"] = groups;
    rec["wall_time"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const bool last = step + 1 == cfg.steps;
    if ((step + 1) % cfg.validate_every == 0 || last) {
      const double v = validation_loss(cfg, model, val);
      rec["val_loss"] = v;
      result.val_loss.emplace_back(step + 1, v);
      if (v < result.best_val) {
        result.best_val = v;
        result.best_step = step + 1;
        best = snapshot(ps);
        if (!opts.out_dir.empty())
          save_checkpoint((opts.out_dir / "best.ckpt").string(),
                          model.to_checkpoint("phase=" + to_string(cfg.phase) + "\nstep=" +
                                              std::to_string(step + 1) + "\n"));
      }
    }
    const std::string line = rec.dump();
    if (log.is_open()) log << line << '\n' << std::flush;
    if (opts.log_line) opts.log_line(line);

    if (!opts.out_dir.empty() && ((step + 1) % cfg.checkpoint_every == 0 || last)) {
      save_checkpoint((opts.out_dir / "last.ckpt").string(),
                      model.to_checkpoint("phase=" + to_string(cfg.phase) + "\nstep=" +
                                          std::to_string(step + 1) + "\n"));
      save_checkpoint((opts.out_dir / "last.state").string(),
                      optimizer_state(ps, opt, step + 1, result));
    }
  }
  restore(ps, best);
  return result;
}

void fit_latent_prior(VaeFormer<float>& model, const std::vector<Tensor>& data) {
  const auto& cfg = model.config();
  const std::size_t cy = cfg.latent_channels, hw = cfg.token_grid().tokens();
  std::vector<double> sum(cy, 0.0), sum2(cy, 0.0);
  double n = 0;
  for (const auto& x : data) {
    auto mu = model.encode_latent(x).mean;
    for (std::size_t c = 0; c < cy; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        const double v = std::nearbyint(static_cast<double>(mu.at(c * hw + i)));
        sum[c] += v;
        sum2[c] += v * v;
      }
    n += static_cast<double>(hw);
  }
  if (n == 0) throw DataError("cannot fit the latent prior on an empty set");
  std::vector<double> loc(cy), sd(cy);
  for (std::size_t c = 0; c < cy; ++c) {
    loc[c] = sum[c] / n;
    sd[c] = std::max(std::sqrt(std::max(sum2[c] / n - loc[c] * loc[c], 0.0)), 0.11);
  }
  model.set_latent_prior(loc, sd);
}

}  // namespace cvc
