#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dalign/parameters.hpp"

namespace dalign {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// One named float block. Blocks whose names start with "meta/" carry model
// configuration rather than trainable parameters.
struct CheckpointBlock {
  std::string name;
  Shape shape;
  std::vector<float> values;

  bool is_meta() const { return name.starts_with("meta/"); }
};

struct Checkpoint {
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock* find(const std::string& name) const;
  // Value of a rank-1, single-element meta block; FormatError when absent.
  double meta(const std::string& key) const;
  void set_meta(const std::string& key, double value);
  std::size_t parameter_scalars() const;  // excludes meta blocks
};

// "DALN", u32 version, u32 block count, then per block: u32 name length, name
// bytes, u32 rank, u32 dims[rank], little-endian f32 data.
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
// The whole buffer is validated before anything is returned: FormatError for a
// bad magic, version or block header, IntegrityError for truncation or
// trailing bytes.
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint checkpoint_from_params(const ParameterStore<T>& params);

// Copies every parameter block into `params`. Names and shapes are checked for
// the whole store first, so a mismatch leaves `params` untouched.
template <typename T>
void load_params(const Checkpoint& ckpt, ParameterStore<T>& params);

}  // namespace dalign
