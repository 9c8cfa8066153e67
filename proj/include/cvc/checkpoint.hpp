#pragma once

// Parameter checkpoint file. Layout (all integers little-endian):
//
//   "CVCK" | u32 version=1 | u32 meta_len | meta bytes | u32 count
//   count x { u16 name_len | name | u8 rank | u32 dim[rank] | u64 offset }
//   payload: float32 values, each tensor at `offset` bytes from payload start
//
// `meta` is opaque here; the model stores its config text in it.

#include <string>
#include <utility>
#include <vector>

#include "cvc/tensor.hpp"

namespace cvc {

struct Checkpoint {
  std::string meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cvc
