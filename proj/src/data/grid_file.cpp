#include <algorithm>
#include <cmath>

#include "cvc/bytes.hpp"
#include "cvc/data.hpp"

namespace cvc {
namespace {
constexpr char kMagic[4] = {'G', 'R', 'D', '1'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

void GridField::validate() const {
  if (channels == 0 || height == 0 || width == 0) throw DataError("grid has an empty dimension");
  if (names.size() != channels)
    throw DataError("grid has " + std::to_string(names.size()) + " channel names for " +
                    std::to_string(channels) + " channels");
  if (lat.size() != height || lon.size() != width)
    throw DataError("grid coordinate arrays do not match its " + std::to_string(height) + "x" +
                    std::to_string(width) + " shape");
  if (values.size() != size())
    throw DataError("grid payload has " + std::to_string(values.size()) + " values, expected " +
                    std::to_string(size()));
  for (std::size_t i = 1; i < lat.size(); ++i)
    if (!(lat[i] < lat[i - 1]))
      throw DataError("latitudes must be strictly decreasing (row " + std::to_string(i) + ")");
  for (float l : lat)
    if (!(l >= -90.0f && l <= 90.0f)) throw DataError("latitude outside [-90, 90]");
}

bool GridField::same_grid(const GridField& o) const {
  return channels == o.channels && height == o.height && width == o.width && lat == o.lat &&
         lon == o.lon && names == o.names;
}

std::vector<std::uint8_t> serialize_grid(const GridField& g) {
  g.validate();
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u16(kVersion);
  w.u16(static_cast<std::uint16_t>(g.channels));
  w.u32(static_cast<std::uint32_t>(g.height));
  w.u32(static_cast<std::uint32_t>(g.width));
  for (const auto& n : g.names) w.str16(n);
  for (float v : g.lat) w.f32(v);
  for (float v : g.lon) w.f32(v);
  for (float v : g.values) w.f32(v);
  return w.take();
}

GridField parse_grid(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "grid file");
  if (r.str(4) != std::string_view(kMagic, 4)) throw DecodeError("grid file: bad magic", 0);
  const auto version = r.u16();
  if (version != kVersion)
    throw DecodeError("grid file: unsupported version " + std::to_string(version), 4);
  GridField g;
  g.channels = r.u16();
  g.height = r.u32();
  g.width = r.u32();
  if (g.channels == 0 || g.height == 0 || g.width == 0)
    throw DecodeError("grid file: empty dimension", r.offset());
  // Reject headers whose payload cannot possibly fit before allocating for it.
  const std::uint64_t n = static_cast<std::uint64_t>(g.channels) * g.height * g.width;
  if (n > bytes.size() / 4) throw DecodeError("grid file: payload shorter than header claims", r.offset());
  for (std::size_t c = 0; c < g.channels; ++c) g.names.push_back(r.str(r.u16()));
  g.lat.resize(g.height);
  for (auto& v : g.lat) v = r.f32();
  g.lon.resize(g.width);
  for (auto& v : g.lon) v = r.f32();
  g.values.resize(n);
  for (auto& v : g.values) v = r.f32();
  if (r.remaining() != 0)
    throw DecodeError("grid file: " + std::to_string(r.remaining()) + " trailing bytes", r.offset());
  try {
    g.validate();
  } catch (const DataError& e) {
    throw DecodeError(std::string("grid file: ") + e.what(), 0);
  }
  return g;
}

void save_grid(const std::filesystem::path& path, const GridField& g) {
  write_file_bytes(path.string(), serialize_grid(g));
}

GridField load_grid(const std::filesystem::path& path) {
  try {
    return parse_grid(read_file_bytes(path.string()));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path> list_grids(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".grd") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<GridField> load_grids(const std::filesystem::path& dir) {
  std::vector<GridField> out;
  for (const auto& p : list_grids(dir)) out.push_back(load_grid(p));
  if (out.empty()) throw DataError("no .grd files in " + dir.string());
  for (const auto& g : out)
    if (!g.same_grid(out.front())) throw DataError("grids in " + dir.string() + " differ in layout");
  return out;
}

std::vector<float> default_latitudes(std::size_t height) {
  std::vector<float> lat(height);
  const double step = 180.0 / static_cast<double>(height);
  for (std::size_t i = 0; i < height; ++i) lat[i] = static_cast<float>(90.0 - step * (i + 0.5));
  return lat;
}

std::vector<float> default_longitudes(std::size_t width) {
  std::vector<float> lon(width);
  const double step = 360.0 / static_cast<double>(width);
  for (std::size_t i = 0; i < width; ++i) lon[i] = static_cast<float>(step * i);
  return lon;
}

}  // namespace cvc
