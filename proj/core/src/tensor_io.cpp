#include "adat/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace adat {

namespace {

constexpr char kTensorMagic[4] = {'A', 'D', 'T', '1'};

std::uint64_t pos_of(std::uint64_t* offset) { return offset ? *offset : 0; }

void bump(std::uint64_t* offset, std::size_t n) {
  if (offset) *offset += n;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32(std::ostream& os, float v) {
  static_assert(sizeof(float) == 4);
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

void read_bytes(std::istream& is, char* dst, std::size_t n, std::uint64_t* offset) {
  is.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw ParseError("unexpected end of file", pos_of(offset));
  }
  bump(offset, n);
}

std::uint32_t read_u32(std::istream& is, std::uint64_t* offset) {
  unsigned char b[4];
  read_bytes(is, reinterpret_cast<char*>(b), 4, offset);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

float read_f32(std::istream& is, std::uint64_t* offset) {
  const std::uint32_t bits = read_u32(is, offset);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void write_tensor(std::ostream& os, const TensorData& t) {
  os.write(kTensorMagic, 4);
  write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
  for (std::size_t e : t.shape) write_u32(os, static_cast<std::uint32_t>(e));
  for (double v : t.values) write_f32(os, static_cast<float>(v));
}

TensorData read_tensor(std::istream& is, std::uint64_t* offset) {
  char magic[4];
  read_bytes(is, magic, 4, offset);
  if (std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw ParseError("bad tensor magic", pos_of(offset) - 4);
  }
  const std::uint32_t rank = read_u32(is, offset);
  if (rank > 8) throw ParseError("implausible tensor rank " + std::to_string(rank),
                                 pos_of(offset) - 4);
  Shape shape(rank);
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    shape[i] = read_u32(is, offset);
    if (shape[i] == 0 || count > std::numeric_limits<std::size_t>::max() / std::max<std::size_t>(shape[i], 1))
      throw ParseError("bad tensor extent", pos_of(offset) - 4);
    count *= shape[i];
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) values[i] = static_cast<double>(read_f32(is, offset));
  return TensorData(std::move(shape), std::move(values));
}

void save_tensor(const std::string& path, const TensorData& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  write_tensor(os, t);
  if (!os) throw std::runtime_error("write failed for " + path);
}

TensorData load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::uint64_t offset = 0;
  return read_tensor(is, &offset);
}

void save_named_tensors(const std::string& path, const NamedTensors& bundle) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write(bundle.header.data(), static_cast<std::streamsize>(bundle.header.size()));
  os.put('\n');
  write_u32(os, static_cast<std::uint32_t>(bundle.entries.size()));
  for (const auto& [name, tensor] : bundle.entries) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, tensor);
  }
  if (!os) throw std::runtime_error("write failed for " + path);
}

NamedTensors load_named_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::uint64_t offset = 0;
  NamedTensors bundle;
  char c;
  while (is.get(c)) {
    ++offset;
    if (c == '\n') break;
    bundle.header.push_back(c);
    if (bundle.header.size() > (1u << 20))
      throw ParseError("unterminated header line", offset);
  }
  if (!is) throw ParseError("unterminated header line", offset);
  const std::uint32_t count = read_u32(is, &offset);
  bundle.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(is, &offset);
    if (name_len > (1u << 16)) throw ParseError("implausible entry name length", offset - 4);
    std::string name(name_len, '\0');
    read_bytes(is, name.data(), name_len, &offset);
    TensorData t = read_tensor(is, &offset);
    bundle.entries.emplace_back(std::move(name), std::move(t));
  }
  return bundle;
}

}  // namespace adat
