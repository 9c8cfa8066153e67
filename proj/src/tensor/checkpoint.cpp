#include "cvc/checkpoint.hpp"

#include <cstring>

#include "cvc/bytes.hpp"

namespace cvc {
namespace {
constexpr char kMagic[4] = {'C', 'V', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.meta.size()));
  w.raw(ckpt.meta);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    w.str16(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.u64(offset);
    offset += 4ull * t.numel();
  }
  for (const auto& [name, t] : ckpt.tensors)
    for (float v : t.data()) w.f32(v);
  return w.take();
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) throw DataError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.meta = r.str(r.u32());
  const auto count = r.u32();

  struct Entry {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = r.str16();
    const auto rank = r.u8();
    for (int d = 0; d < rank; ++d) e.shape.push_back(r.u32());
    e.offset = r.u64();
    entries.push_back(std::move(e));
  }
  const std::size_t payload = r.offset();
  for (auto& e : entries) {
    const std::size_t n = shape_numel(e.shape);
    if (e.offset + 4 * n + payload > bytes.size())
      throw DataError("checkpoint: tensor " + e.name + " extends past end of file");
    ByteReader tr(bytes.subspan(payload + e.offset, 4 * n), "checkpoint tensor " + e.name);
    std::vector<float> v(n);
    for (auto& x : v) x = tr.f32();
    ckpt.tensors.emplace_back(e.name, Tensor::from_data(e.shape, std::move(v)));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_bytes(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file_bytes(path));
}

}  // namespace cvc
