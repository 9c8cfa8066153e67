// cvc: command-line front end for the codec.
//
//   cvc gen-data   --out DIR
//   cvc stats      --data DIR --out STATS
//   cvc pretrain   --data DIR --stats STATS --out RUN
//   cvc finetune   --data DIR --stats STATS --checkpoint CKPT --out RUN
//   cvc compress   --checkpoint CKPT --stats STATS --input GRD|DIR --out CVC|DIR
//   cvc decompress --checkpoint CKPT --stats STATS --input CVC|DIR --out GRD|DIR
//   cvc eval       --checkpoint CKPT --stats STATS --data DIR --out REPORT_DIR
//   cvc rd-sweep   --checkpoint CKPT --stats STATS --data DIR --out SWEEP_DIR
//
// Trailing key=value arguments override the --config file. Exit codes:
// 0 success, 1 usage or configuration error, 2 data error, 3 numerical failure.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "cvc/codec.hpp"
#include "cvc/hash.hpp"
#include "cvc/metrics.hpp"
#include "cvc/train.hpp"
#include "run_config.hpp"

namespace fs = std::filesystem;
using namespace cvc;
using cli::RunConfig;

namespace {

struct Options {
  std::string config, out, checkpoint, stats, data, input, split = "test", mode = "hyperprior";
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda;
  std::vector<std::string> overrides;
  bool resume = false;
};

std::size_t env_threads() {
  const char* v = std::getenv("CVC_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("CVC_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

RunConfig resolve(const Options& o) {
  auto rc = cli::load_run_config(o.config, o.overrides);
  if (o.seed) rc.set_seed(*o.seed);
  if (o.lambda) rc.model.lambda = rc.finetune.lambda = *o.lambda;
  const auto threads = env_threads();
  rc.pretrain.threads = rc.finetune.threads = rc.sweep.threads = threads;
  return rc;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw CLI::RequiredError(flag);
}

// Marks a directory as incomplete until the command that fills it succeeds.
class OutputDir {
 public:
  explicit OutputDir(const fs::path& dir) : marker_(dir / "INCOMPLETE") {
    fs::create_directories(dir);
    std::ofstream(marker_) << "this directory was left by a failed or interrupted run\n";
  }
  void commit() { fs::remove(marker_); }

 private:
  fs::path marker_;
};

void write_text(const fs::path& path, const std::string& text) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
  }
  fs::rename(tmp, path);
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  fs::rename(tmp, path);
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), {}};
}

void snapshot(const fs::path& dir, const RunConfig& rc) { write_text(dir / "resolved_config.json", rc.to_json().dump(2) + "\n"); }

std::vector<Tensor> normalized(const std::vector<GridField>& fields, const NormStats& s) {
  std::vector<Tensor> out;
  for (const auto& g : fields) out.push_back(normalize(g, s));
  return out;
}

VaeFormer<float> load_model(const std::string& path) {
  require(path, "--checkpoint");
  const auto ck = load_checkpoint(path);
  VaeFormer<float> m(checkpoint_config(ck));
  m.load(ck);
  return m;
}

// Same parameters under a config that differs only in lambda.
VaeFormer<float> with_lambda(const VaeFormer<float>& m, double lambda) {
  auto cfg = m.config();
  cfg.lambda = lambda;
  VaeFormer<float> out(cfg);
  for (std::size_t i = 0; i < out.params().size(); ++i) {
    auto dst = out.params()[i].mutable_data();
    const auto src = m.params()[i].data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return out;
}

void log_to_stderr(const std::string& line) {
  static std::size_t n = 0;
  if (n++ % 50 == 0) std::cerr << line << "\n";
}

int cmd_gen_data(const Options& o) {
  require(o.out, "--out");
  const auto rc = resolve(o);
  OutputDir dir(o.out);
  generate_dataset(rc.data, o.out);
  snapshot(o.out, rc);
  dir.commit();
  std::cout << "wrote " << rc.data.train << "/" << rc.data.val << "/" << rc.data.test
            << " instances to " << o.out << "\n";
  return 0;
}

int cmd_stats(const Options& o) {
  resolve(o);  // rejects unknown override keys
  require(o.data, "--data");
  require(o.out, "--out");
  const fs::path split = fs::is_directory(fs::path(o.data) / "train") ? fs::path(o.data) / "train" : fs::path(o.data);
  const auto s = compute_stats(load_grids(split));
  const auto tmp = o.out + ".tmp";
  save_stats(tmp, s);
  fs::rename(tmp, o.out);
  std::cout << s.to_text() << "hash=" << hex64(s.hash()) << "\n";
  return 0;
}

int run_training(const Options& o, Phase phase) {
  require(o.data, "--data");
  require(o.stats, "--stats");
  require(o.out, "--out");
  auto rc = resolve(o);
  const auto stats = load_stats(o.stats);
  const auto train = normalized(load_grids(fs::path(o.data) / "train"), stats);
  const auto val = normalized(load_grids(fs::path(o.data) / "val"), stats);
  OutputDir dir(o.out);

  std::optional<VaeFormer<float>> model;
  TrainConfig tc;
  if (phase == Phase::pretrain) {
    model.emplace(rc.model);
    tc = rc.pretrain;
  } else {
    if (o.checkpoint.empty()) throw CLI::RequiredError("--checkpoint (a pretrain checkpoint)");
    if (!fs::exists(o.checkpoint)) throw DataError("pretrain checkpoint " + o.checkpoint + " does not exist");
    auto pre = load_model(o.checkpoint);
    model.emplace(with_lambda(pre, o.lambda ? *o.lambda : rc.finetune.lambda));
    rc.model = model->config();
    tc = rc.finetune;
    tc.lambda = model->config().lambda;
  }
  snapshot(o.out, rc);
  const auto r = run_phase(tc, *model, train, val, {o.out, o.resume, log_to_stderr});
  if (phase == Phase::pretrain) fit_latent_prior(*model, train);
  save_checkpoint((fs::path(o.out) / "model.ckpt").string(),
                  model->to_checkpoint("phase=" + to_string(phase) + "\nstep=" + std::to_string(r.best_step) + "\n"));
  dir.commit();
  std::cout << to_string(phase) << ": best validation loss " << r.best_val << " at step " << r.best_step
            << "; model written to " << (fs::path(o.out) / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_compress(const Options& o) {
  resolve(o);  // rejects unknown override keys
  require(o.input, "--input");
  require(o.out, "--out");
  require(o.stats, "--stats");
  const auto model = load_model(o.checkpoint);
  const auto stats = load_stats(o.stats);
  const auto mode = parse_coding_mode(o.mode);
  auto one = [&](const fs::path& in, const fs::path& out) {
    const auto c = compress(load_grid(in), model, stats, mode);
    if (c.clamp_warning())
      std::cerr << "warning: " << in.string() << ": " << c.clamped << " of " << c.y_symbols + c.z_symbols
                << " symbols clamped to the coder alphabet\n";
    write_bytes(out, c.bytes);
    return c.bytes.size();
  };
  if (fs::is_directory(o.input)) {
    OutputDir dir(o.out);
    std::size_t total = 0, n = 0;
    for (const auto& p : list_grids(o.input)) {
      total += one(p, fs::path(o.out) / p.filename().replace_extension(".cvc"));
      ++n;
    }
    dir.commit();
    std::cout << "compressed " << n << " fields into " << total << " bytes\n";
  } else {
    const auto n = one(o.input, o.out);
    std::cout << "compressed " << o.input << " into " << n << " bytes\n";
  }
  return 0;
}

int cmd_decompress(const Options& o) {
  resolve(o);  // rejects unknown override keys
  require(o.input, "--input");
  require(o.out, "--out");
  require(o.stats, "--stats");
  const auto model = load_model(o.checkpoint);
  const auto stats = load_stats(o.stats);
  auto one = [&](const fs::path& in, const fs::path& out) {
    const auto g = decompress(read_bytes(in), model, stats);
    write_bytes(out, serialize_grid(g));
  };
  if (fs::is_directory(o.input)) {
    OutputDir dir(o.out);
    std::size_t n = 0;
    for (const auto& e : fs::directory_iterator(o.input)) {
      if (e.path().extension() != ".cvc") continue;
      one(e.path(), fs::path(o.out) / e.path().filename().replace_extension(".grd"));
      ++n;
    }
    dir.commit();
    std::cout << "decompressed " << n << " fields\n";
  } else {
    one(o.input, o.out);
  }
  return 0;
}

// Round trip of every instance of a split through the container.
EvalReport evaluate_split(const VaeFormer<float>& model, const NormStats& stats, const std::vector<GridField>& fields,
                          CodingMode mode) {
  std::vector<GridField> recon;
  std::uint64_t bytes = 0, clamped = 0, values = 0;
  double enc = 0, dec = 0;
  for (const auto& x : fields) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto c = compress(x, model, stats, mode);
    const auto t1 = std::chrono::steady_clock::now();
    auto g = decompress(c.bytes, model, stats);
    const auto t2 = std::chrono::steady_clock::now();
    enc += std::chrono::duration<double>(t1 - t0).count();
    dec += std::chrono::duration<double>(t2 - t1).count();
    g.lat = x.lat;
    g.lon = x.lon;
    recon.push_back(std::move(g));
    bytes += c.bytes.size();
    clamped += c.clamped;
    values += x.size();
  }
  auto r = evaluate(fields, recon, stats);
  const auto size = bpsp_and_ratio(bytes, values);
  r.bpsp = size.bpsp;
  r.ratio = size.ratio;
  r.compressed_bytes = bytes;
  r.values = values;
  r.encode_seconds = enc;
  r.decode_seconds = dec;
  r.clamped = clamped;
  return r;
}

int cmd_eval(const Options& o) {
  resolve(o);  // rejects unknown override keys
  require(o.data, "--data");
  require(o.stats, "--stats");
  require(o.out, "--out");
  const auto model = load_model(o.checkpoint);
  const auto stats = load_stats(o.stats);
  const fs::path split = fs::is_directory(fs::path(o.data) / o.split) ? fs::path(o.data) / o.split : fs::path(o.data);
  const auto r = evaluate_split(model, stats, load_grids(split), parse_coding_mode(o.mode));
  OutputDir dir(o.out);
  write_text(fs::path(o.out) / "report.json", r.to_json() + "\n");
  write_text(fs::path(o.out) / "report.txt", r.to_table());
  dir.commit();
  std::cout << r.to_table();
  return 0;
}

int cmd_rd_sweep(const Options& o) {
  require(o.data, "--data");
  require(o.stats, "--stats");
  require(o.out, "--out");
  auto rc = resolve(o);
  const auto pre = load_model(o.checkpoint);
  const auto stats = load_stats(o.stats);
  const auto train = normalized(load_grids(fs::path(o.data) / "train"), stats);
  const auto val = normalized(load_grids(fs::path(o.data) / "val"), stats);
  const auto test = load_grids(fs::path(o.data) / "test");
  OutputDir dir(o.out);
  snapshot(o.out, rc);
  std::string csv = "lambda,bpsp,ratio,overall_mse_x100\n";
  for (double lambda : rc.sweep_lambdas) {
    auto model = with_lambda(pre, lambda);
    auto tc = rc.sweep;
    tc.lambda = lambda;
    char name[32];
    std::snprintf(name, sizeof name, "lambda_%g", lambda);
    run_phase(tc, model, train, val, {fs::path(o.out) / name, false, log_to_stderr});
    save_checkpoint((fs::path(o.out) / name / "model.ckpt").string(), model.to_checkpoint("phase=joint\n"));
    const auto r = evaluate_split(model, stats, test, CodingMode::hyperprior);
    char row[128];
    std::snprintf(row, sizeof row, "%g,%.6f,%.4f,%.6f\n", lambda, r.bpsp, r.ratio, r.overall_mse);
    csv += row;
    std::cout << row << std::flush;
  }
  write_text(fs::path(o.out) / "rd_sweep.csv", csv);
  dir.commit();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transformer VAE codec for gridded atmospheric fields"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool train_like) {
    sub->add_option("--config", o.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output file or directory");
    if (train_like) {
      sub->add_option("--seed", o.seed, "Seed for data, model and training");
      sub->add_option("--lambda", o.lambda, "Rate weight on the latent rate term");
    }
    sub->add_option("overrides", o.overrides, "key=value config overrides");
  };
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic train/val/test dataset");
  common(gen, true);
  auto* stats = app.add_subcommand("stats", "Compute normalization statistics of a training split");
  common(stats, false);
  stats->add_option("--data", o.data, "Dataset directory (uses its train split) or split directory");
  for (auto [name, help] : {std::pair{"pretrain", "Train encoder and decoder (phase 1)"},
                            std::pair{"finetune", "Train the entropy model with the encoder frozen (phase 2)"}}) {
    auto* sub = app.add_subcommand(name, help);
    common(sub, true);
    sub->add_option("--data", o.data, "Dataset directory with train/ and val/");
    sub->add_option("--stats", o.stats, "Normalization statistics file");
    sub->add_flag("--resume", o.resume, "Continue from last.ckpt in --out");
    if (std::string(name) == "finetune") sub->add_option("--checkpoint", o.checkpoint, "Pretrain checkpoint");
  }
  auto* comp = app.add_subcommand("compress", "Compress a grid file or a directory of them");
  auto* decomp = app.add_subcommand("decompress", "Decompress a container or a directory of them");
  for (auto* sub : {comp, decomp}) {
    common(sub, false);
    sub->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
    sub->add_option("--stats", o.stats, "Normalization statistics file");
    sub->add_option("--input", o.input, "Input file or directory");
  }
  comp->add_option("--mode", o.mode, "hyperprior or factorized")->default_val("hyperprior");
  auto* ev = app.add_subcommand("eval", "Round-trip a split and write the metric report");
  common(ev, false);
  ev->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  ev->add_option("--stats", o.stats, "Normalization statistics file");
  ev->add_option("--data", o.data, "Dataset directory or split directory");
  ev->add_option("--split", o.split, "Split to evaluate")->default_val("test");
  ev->add_option("--mode", o.mode, "hyperprior or factorized")->default_val("hyperprior");
  auto* sweep = app.add_subcommand("rd-sweep", "Train one model per lambda from a pretrain checkpoint");
  common(sweep, true);
  sweep->add_option("--checkpoint", o.checkpoint, "Pretrain checkpoint");
  sweep->add_option("--stats", o.stats, "Normalization statistics file");
  sweep->add_option("--data", o.data, "Dataset directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "gen-data") return cmd_gen_data(o);
    if (name == "stats") return cmd_stats(o);
    if (name == "pretrain") return run_training(o, Phase::pretrain);
    if (name == "finetune") return run_training(o, Phase::finetune);
    if (name == "compress") return cmd_compress(o);
    if (name == "decompress") return cmd_decompress(o);
    if (name == "eval") return cmd_eval(o);
    if (name == "rd-sweep") return cmd_rd_sweep(o);
  } catch (const CLI::RequiredError& e) {
    std::cerr << "error: missing required option " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
