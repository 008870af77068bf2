#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "adat/tensor.hpp"

namespace adat {

// Raised on malformed binary inputs; offset is the byte position at which
// parsing failed.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, std::uint64_t offset)
      : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// Binary tensor format: magic "ADT1", u32 LE rank, rank u32 LE extents,
// row-major f32 LE values.
void write_tensor(std::ostream& os, const TensorData& t);
TensorData read_tensor(std::istream& is, std::uint64_t* offset);

void save_tensor(const std::string& path, const TensorData& t);
TensorData load_tensor(const std::string& path);

// Named-entry container used for model checkpoints: one UTF-8 header line
// (terminated by LF), then u32 LE entry count, then per entry a u32 LE name
// length, the name bytes, and a tensor in the format above.
struct NamedTensors {
  std::string header;
  std::vector<std::pair<std::string, TensorData>> entries;
};

void save_named_tensors(const std::string& path, const NamedTensors& bundle);
NamedTensors load_named_tensors(const std::string& path);

// Little-endian scalar helpers shared with the dataset container.
void write_u32(std::ostream& os, std::uint32_t v);
void write_f32(std::ostream& os, float v);
std::uint32_t read_u32(std::istream& is, std::uint64_t* offset);
float read_f32(std::istream& is, std::uint64_t* offset);
void read_bytes(std::istream& is, char* dst, std::size_t n, std::uint64_t* offset);

}  // namespace adat
