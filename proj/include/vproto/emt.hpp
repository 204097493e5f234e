#ifndef VPROTO_EMT_HPP
#define VPROTO_EMT_HPP

// EMT1 binary matrix container:
//   bytes 0..3   magic "EMT1" (0x45 0x4D 0x54 0x31)
//   bytes 4..7   rows, u32 little-endian
//   bytes 8..11  cols, u32 little-endian
//   then rows*cols IEEE-754 binary64 values, little-endian, row-major.
// No padding, no trailer.

#include <array>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <string_view>

#include "vproto/error.hpp"
#include "vproto/matrix.hpp"

namespace vproto {

inline constexpr std::array<unsigned char, 4> kEmtMagic{0x45, 0x4D, 0x54, 0x31};
inline constexpr std::size_t kEmtHeaderBytes = 12;

namespace detail {

inline void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

inline std::uint64_t get_le(std::string_view in, std::size_t offset, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + static_cast<std::size_t>(i)])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string encode_emt(const Matrix& m) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  require(m.rows() <= kMax && m.cols() <= kMax, ErrorCode::Format, "matrix too large for EMT1");
  std::string out;
  out.reserve(kEmtHeaderBytes + 8 * m.size());
  out.append(reinterpret_cast<const char*>(kEmtMagic.data()), kEmtMagic.size());
  detail::put_le(out, m.rows(), 4);
  detail::put_le(out, m.cols(), 4);
  for (double v : m.data()) detail::put_le(out, std::bit_cast<std::uint64_t>(v), 8);
  return out;
}

inline Matrix decode_emt(std::string_view bytes) {
  if (bytes.size() < kEmtHeaderBytes)
    throw Error(ErrorCode::Format, "truncated EMT header: file ends at byte offset " + std::to_string(bytes.size()) +
                                       ", header needs " + std::to_string(kEmtHeaderBytes));
  for (std::size_t i = 0; i < kEmtMagic.size(); ++i)
    if (static_cast<unsigned char>(bytes[i]) != kEmtMagic[i])
      throw Error(ErrorCode::Format, "bad EMT magic at byte offset " + std::to_string(i));
  const auto rows = static_cast<std::size_t>(detail::get_le(bytes, 4, 4));
  const auto cols = static_cast<std::size_t>(detail::get_le(bytes, 8, 4));
  const std::size_t expected = kEmtHeaderBytes + 8 * rows * cols;
  if (bytes.size() < expected)
    throw Error(ErrorCode::Format, "truncated EMT payload: data ends at byte offset " + std::to_string(bytes.size()) +
                                       ", expected " + std::to_string(expected) + " bytes for " +
                                       std::to_string(rows) + "x" + std::to_string(cols));
  if (bytes.size() > expected)
    throw Error(ErrorCode::Format, "trailing bytes after EMT payload at byte offset " + std::to_string(expected));
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i)
    m.data()[i] = std::bit_cast<double>(detail::get_le(bytes, kEmtHeaderBytes + 8 * i, 8));
  return m;
}

inline void write_emt(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  const std::string bytes = encode_emt(m);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

inline Matrix read_emt(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_emt(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

}  // namespace vproto

#endif  // VPROTO_EMT_HPP
