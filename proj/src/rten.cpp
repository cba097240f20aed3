#include "rcf/rten.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace rcf {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'E', 'N'};
constexpr uint8_t kVersion = 0x01;
constexpr uint8_t kDtypeF32 = 0x01;
constexpr uint8_t kMaxRank = 8;

void put_u64_le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64_le(std::istream& is, const std::string& path) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8))
    throw format_error("rten: truncated header in " + path);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}

}  // namespace

void write_rten(const std::string& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("rten: cannot open for writing: " + path);
  os.write(kMagic, 4);
  const uint8_t head[3] = {kVersion, kDtypeF32, uint8_t(t.rank())};
  if (t.rank() > kMaxRank) throw format_error("rten: rank > 8 unsupported");
  os.write(reinterpret_cast<const char*>(head), 3);
  for (size_t d : t.shape()) put_u64_le(os, d);
  static_assert(sizeof(float) == 4);
  // x86 is little-endian; the payload is written verbatim.
  os.write(reinterpret_cast<const char*>(t.vals().data()),
           std::streamsize(t.numel() * sizeof(float)));
  if (!os) throw io_error("rten: write failed: " + path);
}

Tensor<float> read_rten(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("rten: cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4)) throw format_error("rten: truncated magic in " + path);
  if (std::memcmp(magic, kMagic, 4) != 0) throw format_error("rten: bad magic in " + path);
  uint8_t head[3];
  if (!is.read(reinterpret_cast<char*>(head), 3))
    throw format_error("rten: truncated header in " + path);
  if (head[0] != kVersion)
    throw format_error("rten: unsupported version " + std::to_string(head[0]) + " in " + path);
  if (head[1] != kDtypeF32)
    throw format_error("rten: unsupported dtype " + std::to_string(head[1]) + " in " + path);
  const uint8_t rank = head[2];
  if (rank > kMaxRank) throw format_error("rten: rank " + std::to_string(rank) + " in " + path);
  Shape shape(rank);
  for (auto& d : shape) {
    const uint64_t v = get_u64_le(is, path);
    if (v == 0 || v > (uint64_t(1) << 32))
      throw format_error("rten: implausible dim " + std::to_string(v) + " in " + path);
    d = size_t(v);
  }
  Tensor<float> t(shape);
  if (!is.read(reinterpret_cast<char*>(t.vals().data()),
               std::streamsize(t.numel() * sizeof(float))))
    throw format_error("rten: truncated payload in " + path);
  char extra;
  if (is.read(&extra, 1)) throw format_error("rten: trailing bytes in " + path);
  return t;
}

}  // namespace rcf
