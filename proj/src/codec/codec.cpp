#include "cvc/codec.hpp"

#include <map>

#include "cvc/bytes.hpp"
#include "cvc/hash.hpp"

namespace cvc {
namespace {

constexpr char kMagic[4] = {'C', 'V', 'C', '1'};
constexpr std::uint16_t kVersion = 1;

// Tables are shared by every symbol with the same snapped parameters.
class TableCache {
 public:
  explicit TableCache(SymbolRange range) : range_(range) {}

  const QuantizedCdfTable& get(double mu, double sigma) {
    const auto p = snap_params(mu, sigma, range_);
    const auto key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(p.mean_q)) << 8) | p.scale_index;
    auto it = tables_.find(key);
    if (it == tables_.end()) it = tables_.emplace(key, QuantizedCdfTable::from_params(p, range_)).first;
    return it->second;
  }

 private:
  SymbolRange range_;
  std::map<std::uint64_t, QuantizedCdfTable> tables_;
};

struct CodingTables {
  std::vector<const QuantizedCdfTable*> per_symbol;
  TableFor lookup() const {
    return [this](std::size_t i) -> const QuantizedCdfTable& { return *per_symbol[i]; };
  }
};

CodingTables tables_for(const GaussianField<float>& g, TableCache& cache) {
  CodingTables t;
  t.per_symbol.reserve(g.mean.numel());
  for (std::size_t i = 0; i < g.mean.numel(); ++i) t.per_symbol.push_back(&cache.get(g.mean.at(i), g.scale.at(i)));
  return t;
}

Tensor as_tensor(const std::vector<std::int32_t>& v, Shape shape) {
  std::vector<float> f(v.begin(), v.end());
  return Tensor::from_data(std::move(shape), std::move(f));
}

std::vector<std::uint8_t> serialize_header(const ContainerHeader& h) {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u16(h.version);
  w.u8(static_cast<std::uint8_t>(h.mode));
  w.u16(static_cast<std::uint16_t>(h.channels));
  w.u32(h.height);
  w.u32(h.width);
  for (const auto& n : h.names) w.str16(n);
  w.u64(h.stats_hash);
  w.u64(h.config_hash);
  w.f64(h.lambda);
  w.u32(h.z_bytes);
  w.u32(h.y_bytes);
  w.u32(h.z_crc);
  w.u32(h.y_crc);
  auto bytes = w.take();
  const auto crc = crc32(bytes);
  ByteWriter tail;
  tail.u32(crc);
  bytes.insert(bytes.end(), tail.buffer().begin(), tail.buffer().end());
  return bytes;
}

void check_model_grid(const GridField& x, const ModelConfig& cfg) {
  if (x.channels != cfg.channels || x.height != cfg.height || x.width != cfg.width)
    throw DimensionError("field is " + std::to_string(x.channels) + "x" + std::to_string(x.height) +
                         "x" + std::to_string(x.width) + " but the model expects " +
                         std::to_string(cfg.channels) + "x" + std::to_string(cfg.height) + "x" +
                         std::to_string(cfg.width));
}

std::pair<ContainerHeader, std::size_t> parse_header(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "container");
  if (r.str(4) != std::string_view(kMagic, 4)) throw DecodeError("container: bad magic", 0);
  ContainerHeader h;
  h.version = r.u16();
  if (h.version != kVersion)
    throw DecodeError("container: unsupported version " + std::to_string(h.version), 4);
  const auto mode = r.u8();
  if (mode > 1) throw DecodeError("container: unknown coding mode " + std::to_string(mode), 6);
  h.mode = static_cast<CodingMode>(mode);
  h.channels = r.u16();
  h.height = r.u32();
  h.width = r.u32();
  for (std::uint32_t c = 0; c < h.channels; ++c) h.names.emplace_back(r.str(r.u16()));
  h.stats_hash = r.u64();
  h.config_hash = r.u64();
  h.lambda = r.f64();
  h.z_bytes = r.u32();
  h.y_bytes = r.u32();
  h.z_crc = r.u32();
  h.y_crc = r.u32();
  const std::size_t body = r.offset();
  const auto stored = r.u32();
  if (stored != crc32(bytes.first(body)))
    throw DecodeError("container: header checksum mismatch", body);
  return {h, r.offset()};
}

}  // namespace

std::string to_string(CodingMode m) { return m == CodingMode::hyperprior ? "hyperprior" : "factorized"; }

CodingMode parse_coding_mode(const std::string& s) {
  if (s == "hyperprior") return CodingMode::hyperprior;
  if (s == "factorized") return CodingMode::factorized;
  throw ConfigError("unknown coding mode '" + s + "' (expected hyperprior or factorized)");
}

Compressed compress(const GridField& x, const VaeFormer<float>& model, const NormStats& stats,
                    CodingMode mode) {
  const auto& cfg = model.config();
  x.validate();
  check_model_grid(x, cfg);
  const auto p = model.params().view();
  const auto range = cfg.symbols();
  const auto hg = cfg.hyper_grid();
  const Shape z_shape{cfg.hyper_channels, hg.height, hg.width};

  const auto y = model.encode_latent(p, normalize(x, stats)).mean;
  const auto y_hat = quantize_infer(y.data(), range);

  Compressed out;
  out.y_symbols = y_hat.values.size();
  out.clamped = y_hat.clamped;
  TableCache cache(range);
  std::vector<std::uint8_t> z_payload, y_payload;
  GaussianField<float> y_dist;
  if (mode == CodingMode::hyperprior) {
    const auto z_hat = quantize_infer(model.hyper_encode(p, y).data(), range);
    out.z_symbols = z_hat.values.size();
    out.clamped += z_hat.clamped;
    const auto zt = tables_for(model.hyper_prior(p), cache);
    z_payload = range_encode(z_hat.values, zt.lookup());
    out.estimated_bits += table_bits(z_hat.values, zt.lookup());
    y_dist = model.hyper_decode(p, as_tensor(z_hat.values, z_shape));
  } else {
    y_dist = model.latent_prior(p);
  }
  const auto yt = tables_for(y_dist, cache);
  y_payload = range_encode(y_hat.values, yt.lookup());
  out.estimated_bits += table_bits(y_hat.values, yt.lookup());

  ContainerHeader h;
  h.mode = mode;
  h.channels = static_cast<std::uint32_t>(x.channels);
  h.height = static_cast<std::uint32_t>(x.height);
  h.width = static_cast<std::uint32_t>(x.width);
  h.names = x.names;
  h.stats_hash = stats.hash();
  h.config_hash = cfg.hash();
  h.lambda = cfg.lambda;
  h.z_bytes = static_cast<std::uint32_t>(z_payload.size());
  h.y_bytes = static_cast<std::uint32_t>(y_payload.size());
  h.z_crc = crc32(z_payload);
  h.y_crc = crc32(y_payload);
  out.bytes = serialize_header(h);
  out.header_bytes = out.bytes.size();
  out.bytes.insert(out.bytes.end(), z_payload.begin(), z_payload.end());
  out.bytes.insert(out.bytes.end(), y_payload.begin(), y_payload.end());
  return out;
}

ContainerHeader read_header(std::span<const std::uint8_t> bytes) { return parse_header(bytes).first; }

GridField decompress(std::span<const std::uint8_t> bytes, const VaeFormer<float>& model,
                     const NormStats& stats) {
  const auto [h, offset] = parse_header(bytes);
  const auto& cfg = model.config();
  if (h.config_hash != cfg.hash())
    throw DataError("container was written by model config " + hex64(h.config_hash) +
                    ", loaded checkpoint has " + hex64(cfg.hash()));
  if (h.stats_hash != stats.hash())
    throw DataError("container expects normalization stats " + hex64(h.stats_hash) + ", got " +
                    hex64(stats.hash()));
  if (h.channels != cfg.channels || h.height != cfg.height || h.width != cfg.width)
    throw DecodeError("container: grid does not match the model", 6);
  if (h.names != stats.names) throw DataError("container channel names differ from the stats");
  const std::size_t expected = offset + static_cast<std::size_t>(h.z_bytes) + h.y_bytes;
  if (bytes.size() < expected)
    throw DecodeError("container: truncated payload (" + std::to_string(bytes.size()) + " of " +
                          std::to_string(expected) + " bytes)",
                      bytes.size());
  if (bytes.size() > expected)
    throw DecodeError("container: " + std::to_string(bytes.size() - expected) + " trailing bytes", expected);
  const auto z_payload = bytes.subspan(offset, h.z_bytes);
  const auto y_payload = bytes.subspan(offset + h.z_bytes, h.y_bytes);
  if (crc32(z_payload) != h.z_crc) throw DecodeError("container: z payload checksum mismatch", offset);
  if (crc32(y_payload) != h.y_crc)
    throw DecodeError("container: y payload checksum mismatch", offset + h.z_bytes);

  const auto p = model.params().view();
  const auto range = cfg.symbols();
  const auto g = cfg.token_grid(), hg = cfg.hyper_grid();
  TableCache cache(range);
  GaussianField<float> y_dist;
  if (h.mode == CodingMode::hyperprior) {
    const auto zt = tables_for(model.hyper_prior(p), cache);
    const auto z = range_decode(z_payload, cfg.hyper_channels * hg.tokens(), zt.lookup());
    y_dist = model.hyper_decode(p, as_tensor(z, {cfg.hyper_channels, hg.height, hg.width}));
  } else {
    if (h.z_bytes != 0) throw DecodeError("container: factorized stream carries a z payload", offset);
    y_dist = model.latent_prior(p);
  }
  const auto yt = tables_for(y_dist, cache);
  const auto y = range_decode(y_payload, cfg.latent_channels * g.tokens(), yt.lookup());
  const auto x_hat = model.decode_reconstruction(p, as_tensor(y, {cfg.latent_channels, g.height, g.width}));

  GridField like;
  like.channels = h.channels;
  like.height = h.height;
  like.width = h.width;
  like.names = h.names;
  like.lat = default_latitudes(h.height);
  like.lon = default_longitudes(h.width);
  like.values.assign(like.size(), 0.0f);
  return denormalize(x_hat, stats, like);
}

GridField quantized_forward(const GridField& x, const VaeFormer<float>& model, const NormStats& stats) {
  const auto& cfg = model.config();
  check_model_grid(x, cfg);
  const auto p = model.params().view();
  const auto y = model.encode_latent(p, normalize(x, stats)).mean;
  const auto y_hat = quantize_infer(y.data(), cfg.symbols());
  const auto g = cfg.token_grid();
  const auto x_hat =
      model.decode_reconstruction(p, as_tensor(y_hat.values, {cfg.latent_channels, g.height, g.width}));
  auto out = x;
  return denormalize(x_hat, stats, out);
}

}  // namespace cvc
