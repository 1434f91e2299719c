#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "anchorsched/errors.hpp"
#include "anchorsched/net.hpp"
#include "anchorsched/optimizer.hpp"

// Binary checkpoint blocks. Everything is little-endian; all real values are
// stored as 64-bit doubles so float-parameterized nets round-trip bit-exactly
// (float -> double widening is lossless).

namespace anchorsched::io {

inline void write_u8(std::ostream& os, std::uint8_t x) {
  os.put(static_cast<char>(x));
}

inline void write_u32(std::ostream& os, std::uint32_t x) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
  os.write(b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t x) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((x >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline void write_i32(std::ostream& os, std::int32_t x) {
  write_u32(os, static_cast<std::uint32_t>(x));
}

inline void write_i64(std::ostream& os, std::int64_t x) {
  write_u64(os, static_cast<std::uint64_t>(x));
}

inline void write_f64(std::ostream& os, double x) {
  write_u64(os, std::bit_cast<std::uint64_t>(x));
}

inline std::uint8_t read_u8(std::istream& is) {
  int c = is.get();
  if (c == std::char_traits<char>::eof()) throw IoError("checkpoint: truncated");
  return static_cast<std::uint8_t>(c);
}

inline std::uint32_t read_u32(std::istream& is) {
  char b[4];
  if (!is.read(b, 4)) throw IoError("checkpoint: truncated");
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i)
    x |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return x;
}

inline std::uint64_t read_u64(std::istream& is) {
  char b[8];
  if (!is.read(b, 8)) throw IoError("checkpoint: truncated");
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i)
    x |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
  return x;
}

inline std::int32_t read_i32(std::istream& is) {
  return static_cast<std::int32_t>(read_u32(is));
}

inline std::int64_t read_i64(std::istream& is) {
  return static_cast<std::int64_t>(read_u64(is));
}

inline double read_f64(std::istream& is) {
  return std::bit_cast<double>(read_u64(is));
}

inline constexpr std::uint32_t kNetMagic = 0x54454E41u;   // "ANET"
inline constexpr std::uint32_t kAdamMagic = 0x4D414441u;  // "ADAM"

template <typename Scalar>
void save_net(std::ostream& os, const DenseNet<Scalar>& net) {
  write_u32(os, kNetMagic);
  write_u32(os, 1);  // version
  const NetArch& a = net.arch();
  write_i32(os, a.input_width);
  write_u32(os, static_cast<std::uint32_t>(a.hidden_widths.size()));
  for (int h : a.hidden_widths) write_i32(os, h);
  write_i32(os, a.output_width);
  write_u8(os, static_cast<std::uint8_t>(a.output_activation));
  write_u64(os, net.param_count());
  for (Scalar p : net.params()) write_f64(os, static_cast<double>(p));
}

template <typename Scalar>
DenseNet<Scalar> load_net(std::istream& is) {
  if (read_u32(is) != kNetMagic) throw IoError("checkpoint: bad net magic");
  const std::uint32_t version = read_u32(is);
  if (version != 1)
    throw IoError("checkpoint: unsupported net version " + std::to_string(version));
  NetArch arch;
  arch.input_width = read_i32(is);
  const std::uint32_t n_hidden = read_u32(is);
  arch.hidden_widths.reserve(n_hidden);
  for (std::uint32_t i = 0; i < n_hidden; ++i)
    arch.hidden_widths.push_back(read_i32(is));
  arch.output_width = read_i32(is);
  const std::uint8_t act = read_u8(is);
  if (act > static_cast<std::uint8_t>(Activation::softmax))
    throw IoError("checkpoint: unknown activation code");
  arch.output_activation = static_cast<Activation>(act);
  DenseNet<Scalar> net(std::move(arch));
  const std::uint64_t count = read_u64(is);
  if (count != net.param_count())
    throw IoError("checkpoint: parameter count mismatch");
  for (Scalar& p : net.params()) p = static_cast<Scalar>(read_f64(is));
  return net;
}

template <typename Scalar>
void save_adam(std::ostream& os, const AdamOptimizer<Scalar>& opt) {
  write_u32(os, kAdamMagic);
  write_u32(os, 1);  // version
  write_f64(os, opt.config().step_size);
  write_f64(os, opt.config().beta1);
  write_f64(os, opt.config().beta2);
  write_f64(os, opt.config().epsilon);
  write_i64(os, opt.step_count());
  write_u64(os, opt.param_count());
  for (Scalar x : opt.first_moment()) write_f64(os, static_cast<double>(x));
  for (Scalar x : opt.second_moment()) write_f64(os, static_cast<double>(x));
}

template <typename Scalar>
AdamOptimizer<Scalar> load_adam(std::istream& is) {
  if (read_u32(is) != kAdamMagic) throw IoError("checkpoint: bad adam magic");
  const std::uint32_t version = read_u32(is);
  if (version != 1)
    throw IoError("checkpoint: unsupported adam version " + std::to_string(version));
  AdamConfig cfg;
  cfg.step_size = read_f64(is);
  cfg.beta1 = read_f64(is);
  cfg.beta2 = read_f64(is);
  cfg.epsilon = read_f64(is);
  const std::int64_t t = read_i64(is);
  const std::uint64_t count = read_u64(is);
  AdamOptimizer<Scalar> opt(count, cfg);
  std::vector<Scalar> m(count), v(count);
  for (auto& x : m) x = static_cast<Scalar>(read_f64(is));
  for (auto& x : v) x = static_cast<Scalar>(read_f64(is));
  opt.restore(m, v, t);
  return opt;
}

}  // namespace anchorsched::io
