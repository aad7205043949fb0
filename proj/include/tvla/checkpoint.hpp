#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tvla/tensor.hpp"

namespace tvla {

// On-disk layout:
//   "TVLA-CHECKPOINT 1\n"
//   "meta <key> <value>\n"                                   (any number)
//   "tensor <name> <frozen> <rank> <dims...> <fnv1a-hex>\n"  (one per tensor)
//   "end\n"
//   payloads: raw little-endian float64 values, in manifest order.
struct CheckpointTensor {
  std::string name;
  bool frozen = false;
  Tensor value;
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<CheckpointTensor> tensors;

  void set(const std::string& key, const std::string& value);
  // Throws LookupError when absent.
  const std::string& get(const std::string& key) const;
  bool has(const std::string& key) const;
  const CheckpointTensor* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError with the byte offset (and tensor name) of the fault.
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Shortest decimal text that parses back to the identical double.
std::string exact_double(double v);
double parse_double(const std::string& s);

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace tvla
