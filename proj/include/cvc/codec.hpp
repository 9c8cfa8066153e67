#pragma once

// Single-instance compressed container ("CVC1"). See FORMATS.md for the byte
// layout.
//
// hyperprior mode codes z_hat under the learned factorized prior, then y_hat
// under the Gaussian predicted by hyper_decode(z_hat). factorized mode skips
// the hyper path and codes y_hat under the per-channel latent prior.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cvc/data.hpp"
#include "cvc/model.hpp"

namespace cvc {

enum class CodingMode : std::uint8_t { hyperprior = 0, factorized = 1 };
std::string to_string(CodingMode m);
CodingMode parse_coding_mode(const std::string& s);

struct ContainerHeader {
  std::uint16_t version = 1;
  CodingMode mode = CodingMode::hyperprior;
  std::uint32_t channels = 0, height = 0, width = 0;
  std::vector<std::string> names;
  std::uint64_t stats_hash = 0, config_hash = 0;
  double lambda = 0;
  std::uint32_t z_bytes = 0, y_bytes = 0;
  std::uint32_t z_crc = 0, y_crc = 0;
};

struct Compressed {
  std::vector<std::uint8_t> bytes;
  std::size_t header_bytes = 0;
  std::size_t y_symbols = 0, z_symbols = 0;
  std::size_t clamped = 0;
  // Rate the coder should reach, from the quantized tables.
  double estimated_bits = 0;
  // More than 0.1% of the symbols fell outside the alphabet.
  bool clamp_warning() const { return clamped * 1000 > y_symbols + z_symbols; }
};

Compressed compress(const GridField& x, const VaeFormer<float>& model, const NormStats& stats,
                    CodingMode mode = CodingMode::hyperprior);

// Parses and checks the header (magic, version, header CRC) without decoding.
ContainerHeader read_header(std::span<const std::uint8_t> bytes);

// Throws DataError on hash mismatches and DecodeError on malformed or
// corrupted streams. Coordinates of the result are the regular cell-centre
// grid (default_latitudes / default_longitudes).
GridField decompress(std::span<const std::uint8_t> bytes, const VaeFormer<float>& model,
                     const NormStats& stats);

// The model's quantized forward pass without any bitstream: normalize,
// round the posterior mean, decode, denormalize.
GridField quantized_forward(const GridField& x, const VaeFormer<float>& model, const NormStats& stats);

}  // namespace cvc
