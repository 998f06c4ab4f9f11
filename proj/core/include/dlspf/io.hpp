#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "dlspf/tensor.hpp"

namespace dlspf::io {

// Binary tensor container. Layout (all integers little-endian):
//   magic   "LTSF" (4 bytes)
//   version u32, currently 1
//   dtype   u8: 0 = float32, 1 = float64
//   ndim    u8
//   shape   ndim x u64
//   payload row-major values, IEEE-754 little-endian
void write_tensor(std::ostream& out, const ad::Tensor& t);
ad::Tensor read_tensor(std::istream& in);
// File variants write atomically (temp file + rename).
void write_tensor_file(const std::string& path, const ad::Tensor& t);
ad::Tensor read_tensor_file(const std::string& path);

// Named-tensor container for model weights. Layout:
//   magic      "LTCK" (4 bytes)
//   version    u32, currently 1
//   model_kind u16 length + UTF-8 bytes
//   config_hash u16 length + UTF-8 bytes
//   count      u32
//   entries    count x { u16 name length, UTF-8 name, tensor block as above }
struct Checkpoint {
    std::string model_kind;
    std::string config_hash;
    std::vector<std::pair<std::string, ad::Tensor>> tensors;

    const ad::Tensor& find(const std::string& name) const;
    bool contains(const std::string& name) const;
    void add(const std::string& name, const ad::Tensor& t);
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void write_checkpoint_file(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint_file(const std::string& path);

// Write-temp-then-rename so partially written files are never observed.
void atomic_write_file(const std::string& path, const std::string& bytes);
std::string read_file_bytes(const std::string& path);

}  // namespace dlspf::io
