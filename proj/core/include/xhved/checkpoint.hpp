#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "xhved/model.hpp"
#include "xhved/optimizer.hpp"

namespace xhved {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training exactly.
struct Checkpoint {
  ModelConfig model;
  std::uint64_t step = 0;          // completed training steps
  ParamList<float> parameters;
  std::uint64_t optimizer_steps = 0;
  ParamList<float> optimizer_state;
  std::string rng_state;
};

/// Layout (little-endian): "XHVD", u32 version, u32-length model config
/// text, u64 step, parameter entries, u64 optimizer step count, optimizer
/// entries, u32-length RNG state. An entry block is a u32 count followed by
/// (u32 name length, name, u8 dtype 1=f32/2=f64, u32 rank, u64 dims, data).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint parameters into a model built from the same config.
void apply_parameters(const Checkpoint& ckpt, XhvedModel<float>& model);

}  // namespace xhved
