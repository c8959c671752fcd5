#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "xhved/modality.hpp"
#include "xhved/volume.hpp"

namespace xhved {

/// One training/evaluation subject: all four modalities z-scored, plus the
/// nested region masks.
struct Case {
  std::string id;
  Tensor<float> images;  // [4,D,H,W], order FLAIR, T1, T1c, T2
  Tensor<float> labels;  // [3,D,H,W], order WT, TC, ET
  Spacing spacing;

  std::array<std::size_t, 3> extent() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
};

/// Builds a case from a volume holding FLAIR/T1/T1c/T2/WT/TC/ET channels.
Case make_case(const Volume& volume, std::string id);

/// Writes one NIfTI file per channel (named after the role) and a
/// `channels.tsv` manifest of `index<TAB>role` lines.
void write_case_dir(const Volume& volume, const std::filesystem::path& dir);
Volume read_case_dir(const std::filesystem::path& dir);
std::string channel_file_name(ChannelRole role);

/// Every subdirectory of `root` that holds a manifest, in lexicographic order.
std::vector<Case> load_dataset(const std::filesystem::path& root);

/// Phantom i uses seed derive_seed(seed, i).
std::vector<Volume> generate_phantom_set(std::size_t count, std::array<std::size_t, 3> extent,
                                         std::uint64_t seed);

/// [B,4,D,H,W] images for `indices` with modalities outside `subset` zeroed.
Tensor<float> batch_images(const std::vector<Case>& cases, const std::vector<std::size_t>& indices,
                           ModalitySubset subset);
/// [B,3,D,H,W] region masks.
Tensor<float> batch_labels(const std::vector<Case>& cases, const std::vector<std::size_t>& indices);

}  // namespace xhved
