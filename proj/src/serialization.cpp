#include "prsfda/serialization.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "prsfda/error.hpp"

namespace prsfda {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void Fnv1a::update(std::span<const std::uint8_t> bytes) noexcept {
  for (std::uint8_t b : bytes) {
    state_ ^= b;
    state_ *= 0x100000001b3ULL;
  }
}

void Fnv1a::update(std::string_view text) noexcept {
  update(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

void Fnv1a::update(double value) noexcept { update(std::bit_cast<std::uint64_t>(value)); }

void Fnv1a::update(std::uint64_t value) noexcept {
  std::array<std::uint8_t, 8> bytes{};
  std::memcpy(bytes.data(), &value, 8);
  update(bytes);
}

std::string Fnv1a::hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  std::uint64_t v = state_;
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

std::string hash_hex(std::string_view text) {
  Fnv1a h;
  h.update(text);
  return h.hex();
}

std::string hash_tensor_hex(const Tensor& t) {
  Fnv1a h;
  for (std::size_t e : t.shape()) h.update(static_cast<std::uint64_t>(e));
  for (double v : t.data()) h.update(v);
  return h.hex();
}

namespace {

void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 8);
  if (in.gcount() != 8) throw Error(ErrorKind::kIo, "truncated payload while reading tensor framing");
  return v;
}

constexpr std::uint64_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  write_u64(out, t.rank());
  for (std::size_t e : t.shape()) write_u64(out, e);
  out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * 8));
  if (!out) throw Error(ErrorKind::kIo, "failed writing tensor payload");
}

Tensor read_tensor(std::istream& in) {
  const std::uint64_t rank = read_u64(in);
  if (rank > kMaxRank) throw Error(ErrorKind::kFormat, "implausible tensor rank " + std::to_string(rank));
  std::vector<std::size_t> shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    e = read_u64(in);
    count *= e;
    if (count > kMaxElements) throw Error(ErrorKind::kFormat, "implausible tensor size");
  }
  std::vector<double> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * 8));
  if (static_cast<std::uint64_t>(in.gcount()) != count * 8) {
    throw Error(ErrorKind::kIo, "truncated payload: expected " + std::to_string(count) + " values");
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor to_tensor(const LabelMap& labels) {
  Tensor t({labels.height, labels.width});
  for (std::size_t i = 0; i < labels.size(); ++i) t[i] = labels[i];
  return t;
}

LabelMap to_label_map(const Tensor& t) {
  if (t.rank() != 2) throw Error(ErrorKind::kFormat, "label record must be rank 2, got " + t.shape_string());
  LabelMap labels(t.extent(0), t.extent(1));
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (v != std::floor(v) || v < 0) throw Error(ErrorKind::kFormat, "label record holds a non-integer id");
    labels[i] = static_cast<std::int32_t>(v);
  }
  return labels;
}

Tensor to_tensor(const Mask& mask) {
  Tensor t({mask.height, mask.width});
  for (std::size_t i = 0; i < mask.size(); ++i) t[i] = mask[i];
  return t;
}

Mask to_mask(const Tensor& t) {
  if (t.rank() != 2) throw Error(ErrorKind::kFormat, "mask record must be rank 2, got " + t.shape_string());
  Mask mask(t.extent(0), t.extent(1));
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) throw Error(ErrorKind::kFormat, "mask record is not binary");
    mask[i] = static_cast<std::uint8_t>(t[i]);
  }
  return mask;
}

void write_header(std::ostream& out, std::string_view magic, const std::string& json_line) {
  out << magic << '\n' << json_line << '\n';
  if (!out) throw Error(ErrorKind::kIo, "failed writing header");
}

std::string read_header(std::istream& in, std::string_view magic) {
  std::string found;
  if (!std::getline(in, found)) throw Error(ErrorKind::kIo, "empty file, expected magic " + std::string(magic));
  if (found != magic) {
    if (found.size() > 32) found = found.substr(0, 32) + "...";
    throw Error(ErrorKind::kFormat, "bad magic '" + found + "', expected '" + std::string(magic) + "'");
  }
  std::string json_line;
  if (!std::getline(in, json_line)) throw Error(ErrorKind::kIo, "truncated header after magic");
  return json_line;
}

}  // namespace prsfda
