#include <charconv>
#include <sstream>

#include "cvc/hash.hpp"
#include "cvc/model.hpp"

namespace cvc {
namespace {

struct SizeField {
  const char* key;
  std::size_t ModelConfig::*member;
};

constexpr SizeField kSizeFields[] = {
    {"channels", &ModelConfig::channels},
    {"height", &ModelConfig::height},
    {"width", &ModelConfig::width},
    {"patch", &ModelConfig::patch},
    {"dim", &ModelConfig::dim},
    {"heads", &ModelConfig::heads},
    {"mlp_hidden", &ModelConfig::mlp_hidden},
    {"depth", &ModelConfig::depth},
    {"win_square", &ModelConfig::win_square},
    {"win_ew_h", &ModelConfig::ew_h},
    {"win_ew_w", &ModelConfig::ew_w},
    {"win_ns_h", &ModelConfig::ns_h},
    {"win_ns_w", &ModelConfig::ns_w},
    {"latent_channels", &ModelConfig::latent_channels},
    {"hyper_patch", &ModelConfig::hyper_patch},
    {"hyper_dim", &ModelConfig::hyper_dim},
    {"hyper_heads", &ModelConfig::hyper_heads},
    {"hyper_mlp_hidden", &ModelConfig::hyper_mlp_hidden},
    {"hyper_depth", &ModelConfig::hyper_depth},
    {"hyper_win_square", &ModelConfig::hyper_win_square},
    {"hyper_win_ew_h", &ModelConfig::hyper_ew_h},
    {"hyper_win_ew_w", &ModelConfig::hyper_ew_w},
    {"hyper_win_ns_h", &ModelConfig::hyper_ns_h},
    {"hyper_win_ns_w", &ModelConfig::hyper_ns_w},
    {"hyper_channels", &ModelConfig::hyper_channels},
};

template <class I>
I parse_int(const std::string& key, const std::string& v) {
  I out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
}

std::string fmt_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

ActConfig make_act(TokenGrid grid, std::size_t dim, std::size_t heads, std::size_t hidden,
                   std::size_t depth, std::size_t sq, std::size_t ewh, std::size_t eww,
                   std::size_t nsh, std::size_t nsw) {
  ActConfig a;
  a.grid = grid;
  a.dim = dim;
  a.heads = heads;
  a.mlp_hidden = hidden;
  a.depth = depth;
  a.square = WindowSpec::make(sq, sq, WindowKind::square);
  a.east_west = WindowSpec::make(ewh, eww, WindowKind::east_west);
  a.north_south = WindowSpec::make(nsh, nsw, WindowKind::north_south);
  return a;
}

}  // namespace

ActConfig ModelConfig::act() const {
  return make_act(token_grid(), dim, heads, mlp_hidden, depth, win_square, ew_h, ew_w, ns_h, ns_w);
}

ActConfig ModelConfig::hyper_act() const {
  return make_act(hyper_grid(), hyper_dim, hyper_heads, hyper_mlp_hidden, hyper_depth,
                  hyper_win_square, hyper_ew_h, hyper_ew_w, hyper_ns_h, hyper_ns_w);
}

void ModelConfig::validate() const {
  for (const auto& f : kSizeFields)
    if (this->*f.member == 0) throw ConfigError(std::string("config key '") + f.key + "' must be positive");
  if (height % patch || width % patch)
    throw ConfigError("grid " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch " + std::to_string(patch));
  const auto g = token_grid();
  if (g.height % hyper_patch || g.width % hyper_patch)
    throw ConfigError("token grid " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                      " is not divisible by hyper_patch " + std::to_string(hyper_patch));
  act().validate();
  hyper_act().validate();
  symbols().validate();
  if (!(lambda > 0.0)) throw ConfigError("lambda must be > 0");
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  for (const auto& f : kSizeFields) os << f.key << '=' << this->*f.member << '\n';
  os << "symbol_min=" << symbol_min << '\n';
  os << "symbol_max=" << symbol_max << '\n';
  os << "lambda=" << fmt_double(lambda) << '\n';
  os << "seed=" << seed << '\n';
  return os.str();
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : kSizeFields)
    if (key == f.key) {
      this->*f.member = parse_int<std::size_t>(key, value);
      return;
    }
  if (key == "symbol_min") symbol_min = parse_int<std::int32_t>(key, value);
  else if (key == "symbol_max") symbol_max = parse_int<std::int32_t>(key, value);
  else if (key == "lambda") lambda = parse_double(key, value);
  else if (key == "seed") seed = parse_int<std::uint64_t>(key, value);
  else throw ConfigError("unknown model config key '" + key + "'");
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("malformed config line '" + line + "'");
    c.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return c;
}

std::uint64_t ModelConfig::hash() const { return fnv1a64(to_text()); }

std::string meta_value(const std::string& meta, const std::string& key) {
  std::istringstream is(meta);
  std::string line;
  while (std::getline(is, line))
    if (line.size() > key.size() && line.compare(0, key.size(), key) == 0 && line[key.size()] == '=')
      return line.substr(key.size() + 1);
  return {};
}

ModelConfig checkpoint_config(const Checkpoint& ckpt) {
  const auto marker = ckpt.meta.find("config_hash=");
  if (marker == std::string::npos) throw DataError("checkpoint has no model config section");
  auto cfg = ModelConfig::from_text(ckpt.meta.substr(0, marker));
  const auto stored = meta_value(ckpt.meta, "config_hash");
  if (stored != hex64(cfg.hash()))
    throw DataError("checkpoint config hash " + stored + " does not match its config text (" +
                    hex64(cfg.hash()) + ")");
  cfg.validate();
  return cfg;
}

}  // namespace cvc
