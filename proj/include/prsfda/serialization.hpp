#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

#include "prsfda/tensor.hpp"

namespace prsfda {

// 64-bit FNV-1a; used for config, checkpoint and dataset digests.
class Fnv1a {
 public:
  void update(std::span<const std::uint8_t> bytes) noexcept;
  void update(std::string_view text) noexcept;
  void update(double value) noexcept;
  void update(std::uint64_t value) noexcept;
  std::uint64_t digest() const noexcept { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string hash_hex(std::string_view text);
std::string hash_tensor_hex(const Tensor& t);

// Framing shared by checkpoints, datasets and pseudo-label files:
//   u64 extent count, u64 extents..., f64 values...   (all little-endian)
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

Tensor to_tensor(const LabelMap& labels);
LabelMap to_label_map(const Tensor& t);
Tensor to_tensor(const Mask& mask);
Mask to_mask(const Tensor& t);

// Header = magic line followed by one JSON line. read_header checks the magic
// and returns the JSON text; a mismatch throws kFormat naming what was found.
void write_header(std::ostream& out, std::string_view magic, const std::string& json_line);
std::string read_header(std::istream& in, std::string_view magic);

}  // namespace prsfda
