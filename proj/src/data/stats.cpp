#include <charconv>
#include <cmath>
#include <sstream>

#include "cvc/bytes.hpp"
#include "cvc/data.hpp"
#include "cvc/hash.hpp"

namespace cvc {
namespace {

std::string fmt(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void check_split(const std::vector<GridField>& split) {
  if (split.empty()) throw DataError("cannot compute statistics of an empty split");
  for (const auto& g : split)
    if (!g.same_grid(split.front())) throw DataError("split mixes grid layouts");
}

NormStats finish(const GridField& like, std::vector<double> mean, std::vector<double> var) {
  NormStats s;
  s.names = like.names;
  s.mean = std::move(mean);
  for (std::size_t c = 0; c < var.size(); ++c) {
    const double sd = std::sqrt(std::max(var[c], 0.0));
    if (!(sd > 1e-12 * std::max(1.0, std::abs(s.mean[c]))))
      throw DataError("channel '" + like.names[c] + "' has zero variance");
    s.stddev.push_back(sd);
  }
  return s;
}

}  // namespace

NormStats compute_stats(const std::vector<GridField>& split) {
  check_split(split);
  const auto& g0 = split.front();
  const std::size_t hw = g0.height * g0.width;
  std::vector<double> n(g0.channels, 0.0), mean(g0.channels, 0.0), m2(g0.channels, 0.0);
  for (const auto& g : split) {
    for (std::size_t c = 0; c < g.channels; ++c) {
      // Moments of this instance, then a pairwise merge into the running total.
      const float* v = g.values.data() + c * hw;
      double m = 0.0;
      for (std::size_t i = 0; i < hw; ++i) m += v[i];
      m /= static_cast<double>(hw);
      double q = 0.0;
      for (std::size_t i = 0; i < hw; ++i) q += (v[i] - m) * (v[i] - m);
      const double nb = static_cast<double>(hw), na = n[c], nt = na + nb;
      const double delta = m - mean[c];
      mean[c] += delta * nb / nt;
      m2[c] += q + delta * delta * na * nb / nt;
      n[c] = nt;
    }
  }
  for (std::size_t c = 0; c < g0.channels; ++c) m2[c] /= n[c];
  return finish(g0, std::move(mean), std::move(m2));
}

NormStats compute_stats_two_pass(const std::vector<GridField>& split) {
  check_split(split);
  const auto& g0 = split.front();
  const std::size_t hw = g0.height * g0.width;
  const double count = static_cast<double>(hw * split.size());
  std::vector<double> mean(g0.channels, 0.0), var(g0.channels, 0.0);
  for (const auto& g : split)
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t i = 0; i < hw; ++i) mean[c] += g.values[c * hw + i];
  for (auto& m : mean) m /= count;
  for (const auto& g : split)
    for (std::size_t c = 0; c < g.channels; ++c)
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = g.values[c * hw + i] - mean[c];
        var[c] += d * d;
      }
  for (auto& v : var) v /= count;
  return finish(g0, std::move(mean), std::move(var));
}

std::string NormStats::to_text() const {
  std::ostringstream os;
  os << "channels=" << channels() << '\n';
  for (std::size_t c = 0; c < channels(); ++c) {
    os << "name." << c << '=' << (c < names.size() ? names[c] : "") << '\n';
    os << "mean." << c << '=' << fmt(mean[c]) << '\n';
    os << "std." << c << '=' << fmt(stddev[c]) << '\n';
  }
  return os.str();
}

std::uint64_t NormStats::hash() const { return fnv1a64(to_text()); }

NormStats NormStats::from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line, body, stored_hash;
  std::size_t channels = 0;
  std::vector<std::pair<std::string, std::string>> kv;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("stats: malformed line '" + line + "'");
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "hash") {
      stored_hash = value;
      continue;
    }
    if (key == "channels") channels = std::stoul(value);
    kv.emplace_back(key, value);
  }
  if (channels == 0) throw DataError("stats: missing channel count");
  NormStats s;
  s.names.resize(channels);
  s.mean.assign(channels, NAN);
  s.stddev.assign(channels, NAN);
  for (const auto& [key, value] : kv) {
    if (key == "channels") continue;
    const auto dot = key.find('.');
    if (dot == std::string::npos) throw DataError("stats: unknown key '" + key + "'");
    const std::size_t c = std::stoul(key.substr(dot + 1));
    if (c >= channels) throw DataError("stats: channel index out of range in '" + key + "'");
    const auto field = key.substr(0, dot);
    if (field == "name") s.names[c] = value;
    else if (field == "mean") s.mean[c] = std::stod(value);
    else if (field == "std") s.stddev[c] = std::stod(value);
    else throw DataError("stats: unknown key '" + key + "'");
  }
  for (std::size_t c = 0; c < channels; ++c)
    if (!std::isfinite(s.mean[c]) || !(s.stddev[c] > 0))
      throw DataError("stats: channel " + std::to_string(c) + " is incomplete or has std <= 0");
  if (!stored_hash.empty() && stored_hash != hex64(s.hash()))
    throw DataError("stats: stored hash " + stored_hash + " does not match content " + hex64(s.hash()));
  return s;
}

void save_stats(const std::filesystem::path& path, const NormStats& s) {
  const auto text = s.to_text() + "hash=" + hex64(s.hash()) + "\n";
  write_file_bytes(path.string(), std::vector<std::uint8_t>(text.begin(), text.end()));
}

NormStats load_stats(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path.string());
  try {
    return NormStats::from_text(std::string(bytes.begin(), bytes.end()));
  } catch (const std::logic_error&) {
    throw DataError(path.string() + ": malformed number in stats file");
  }
}

Tensor normalize(const GridField& g, const NormStats& s) {
  if (g.channels != s.channels())
    throw DataError("stats have " + std::to_string(s.channels()) + " channels, grid has " +
                    std::to_string(g.channels));
  if (!s.names.empty() && s.names != g.names)
    throw DataError("stats were computed for different channels than this grid holds");
  const std::size_t hw = g.height * g.width;
  std::vector<float> out(g.size());
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double m = s.mean[c], inv = 1.0 / s.stddev[c];
    for (std::size_t i = 0; i < hw; ++i)
      out[c * hw + i] = static_cast<float>((g.values[c * hw + i] - m) * inv);
  }
  return Tensor::from_data({g.channels, g.height, g.width}, std::move(out));
}

GridField denormalize(const Tensor& x, const NormStats& s, const GridField& like) {
  if (x.shape() != Shape{like.channels, like.height, like.width} || like.channels != s.channels())
    throw DimensionError("denormalize: tensor " + shape_str(x.shape()) + " does not match grid");
  GridField g = like;
  const std::size_t hw = like.height * like.width;
  for (std::size_t c = 0; c < like.channels; ++c)
    for (std::size_t i = 0; i < hw; ++i)
      g.values[c * hw + i] =
          static_cast<float>(static_cast<double>(x.at(c * hw + i)) * s.stddev[c] + s.mean[c]);
  return g;
}

}  // namespace cvc
