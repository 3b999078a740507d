#pragma once

// MGRD checkpoint container.
//
// Layout (little-endian):
//   "MGRD" u32 version u32 entry_count
//   per entry: u32 name_len, name bytes, u32 rank, u64 extents[rank], f32 values
//
// Entries are written in the given order, so identical parameters give
// identical bytes.

#include "plural/nn.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace plural {

using TensorMap = std::map<std::string, Tensor>;

constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const nn::ParamList& entries);
std::string encode_checkpoint(const nn::ParamList& entries);
TensorMap read_checkpoint(const std::filesystem::path& path);
TensorMap decode_checkpoint(const std::string& bytes);

// Copies values into existing parameters. Missing entries or extent
// mismatches throw CheckpointError naming the parameter and both extents.
void load_params(const TensorMap& source, const nn::ParamList& params);

// Small integer metadata stored as a float vector entry, used to reject
// checkpoints trained with different dimensions.
Tensor meta_tensor(std::initializer_list<int> values);
void check_meta(const TensorMap& source, const std::string& name, std::initializer_list<int> expected,
                std::initializer_list<const char*> labels);

}  // namespace plural
