#include <algorithm>

#include "cvc/entropy.hpp"

namespace cvc {
namespace {
constexpr std::uint64_t kWindowBits = 48;
constexpr std::uint64_t kMask = (1ull << kWindowBits) - 1;
constexpr std::uint64_t kTop = 1ull << (kWindowBits - 8);  // renormalize below 2^40
constexpr std::size_t kWindowBytes = kWindowBits / 8;
}  // namespace

void RangeEncoder::encode(std::uint32_t start, std::uint32_t freq) {
  const std::uint64_t r = range_ >> kCdfPrecision;
  low_ += r * start;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void RangeEncoder::shift_low() {
  if (low_ < (0xFFull << (kWindowBits - 8)) || low_ > kMask) {
    const auto carry = static_cast<std::uint8_t>(low_ >> kWindowBits);
    // The very first cached byte is always zero (no carry can reach it), so
    // it is never written and the decoder does not expect it.
    if (!first_) out_.push_back(static_cast<std::uint8_t>(cache_ + carry));
    first_ = false;
    for (; pending_ > 0; --pending_) out_.push_back(static_cast<std::uint8_t>(0xFF + carry));
    cache_ = static_cast<std::uint8_t>(low_ >> (kWindowBits - 8));
  } else {
    ++pending_;
  }
  low_ = (low_ << 8) & kMask;
}

std::vector<std::uint8_t> RangeEncoder::finish() {
  // Any value in [low, low + range) identifies the stream; the multiple of
  // 2^40 in it needs a single byte beyond what has been shifted out.
  low_ = (low_ + kTop - 1) & ~(kTop - 1);
  shift_low();
  shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const std::uint8_t> bytes) : bytes_(bytes) {
  for (std::size_t i = 0; i < kWindowBytes; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t RangeDecoder::next_byte() {
  if (pos_ < bytes_.size()) return bytes_[pos_++];
  // A valid stream is read at most kWindowBytes - 1 bytes past its end.
  if (pos_ >= bytes_.size() + kWindowBytes - 1)
    throw DecodeError("range decoder ran past end of stream", bytes_.size());
  ++pos_;
  return 0;
}

std::uint32_t RangeDecoder::target() {
  step_ = range_ >> kCdfPrecision;
  const std::uint64_t q = code_ / step_;
  if (code_ >= range_ || q >= kCdfTotal)
    throw DecodeError("corrupt range-coded stream", std::min(pos_, bytes_.size()));
  return static_cast<std::uint32_t>(q);
}

void RangeDecoder::consume(std::uint32_t start, std::uint32_t freq) {
  code_ -= step_ * start;
  range_ = step_ * freq;
  while (range_ < kTop) {
    code_ = ((code_ << 8) | next_byte()) & kMask;
    range_ <<= 8;
  }
}

std::int32_t RangeDecoder::decode(const QuantizedCdfTable& table) {
  const std::uint32_t q = target();
  // Last cdf entry <= q.
  auto it = std::upper_bound(table.cdf.begin(), table.cdf.end(), q);
  const auto i = static_cast<std::size_t>(it - table.cdf.begin()) - 1;
  consume(table.cdf[i], table.cdf[i + 1] - table.cdf[i]);
  return table.min_symbol + static_cast<std::int32_t>(i);
}

void RangeDecoder::finish() const {
  // The encoder emits one byte per renormalization shift plus one; the
  // decoder has read a full window ahead of that.
  if (pos_ + 1 != bytes_.size() + kWindowBytes)
    throw DecodeError("stream length does not match decoded symbols (consumed " +
                          std::to_string(pos_ + 1 - kWindowBytes) + " of " +
                          std::to_string(bytes_.size()) + " bytes)",
                      std::min(pos_, bytes_.size()));
}

std::vector<std::uint8_t> range_encode(std::span<const std::int32_t> symbols,
                                       const TableFor& table_for) {
  RangeEncoder enc;
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    const auto& t = table_for(i);
    if (!t.contains(symbols[i]))
      throw DataError("range_encode: symbol " + std::to_string(symbols[i]) + " at index " +
                      std::to_string(i) + " is outside the alphabet [" +
                      std::to_string(t.min_symbol) + ", " +
                      std::to_string(t.min_symbol + static_cast<std::int32_t>(t.symbols()) - 1) +
                      "]");
    enc.encode(t.start(symbols[i]), t.freq(symbols[i]));
  }
  return enc.finish();
}

std::vector<std::int32_t> range_decode(std::span<const std::uint8_t> bytes, std::size_t count,
                                       const TableFor& table_for) {
  RangeDecoder dec(bytes);
  std::vector<std::int32_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = dec.decode(table_for(i));
  dec.finish();
  return out;
}

}  // namespace cvc
