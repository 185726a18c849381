#pragma once

// Binary feature-grid files: three little-endian int32 (H, W, C) followed by
// H*W*C little-endian float32 values in row-major order, channels innermost.
// Mel and cepstral matrices use the same layout with C = 1.

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>

#include "csb/error.hpp"
#include "csb/matrix.hpp"
#include "csb/spatial_cond.hpp"

namespace csb {

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}
}  // namespace detail

inline std::string encode_grid(const FeatureGrid& g) {
  std::string out;
  out.reserve(12 + 4 * g.data.size());
  for (std::size_t d : {g.h, g.w, g.c}) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : g.data) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

inline FeatureGrid decode_grid(const std::string& bytes) {
  if (bytes.size() < 12) throw ParseError("feature grid header truncated");
  const auto h = static_cast<std::int32_t>(detail::get_u32(bytes, 0));
  const auto w = static_cast<std::int32_t>(detail::get_u32(bytes, 4));
  const auto c = static_cast<std::int32_t>(detail::get_u32(bytes, 8));
  if (h < 0 || w < 0 || c < 0) throw ParseError("feature grid header has negative dimensions");
  FeatureGrid g(static_cast<std::size_t>(h), static_cast<std::size_t>(w), static_cast<std::size_t>(c));
  if (bytes.size() != 12 + 4 * g.data.size()) throw ParseError("feature grid payload size does not match header");
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    g.data[i] = std::bit_cast<float>(detail::get_u32(bytes, 12 + 4 * i));
  }
  return g;
}

inline FeatureGrid grid_from_matrix(const Matrix& m) {
  FeatureGrid g(m.rows, m.cols, 1);
  g.data = m.data;
  return g;
}

inline Matrix matrix_from_grid(const FeatureGrid& g) {
  if (g.c != 1) throw ShapeError("matrix export expects a single-channel grid");
  Matrix m(g.h, g.w);
  m.data = g.data;
  return m;
}

inline void write_grid(const std::string& path, const FeatureGrid& g) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const auto bytes = encode_grid(g);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline FeatureGrid read_grid(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open feature grid " + path);
  return decode_grid(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
}

}  // namespace csb
