#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "xhved/volume.hpp"

namespace xhved::nifti {

inline constexpr std::int32_t kHeaderSize = 348;
inline constexpr std::int16_t kFloat32 = 16;
inline constexpr std::size_t kDataOffset = 352;  // header + 4-byte extension flag

/// The subset of the NIfTI-1 header this project reads and writes.
struct Header {
  std::int32_t sizeof_hdr = kHeaderSize;
  std::array<std::int16_t, 8> dim{};
  std::int16_t datatype = kFloat32;
  std::int16_t bitpix = 32;
  std::array<float, 8> pixdim{};
  float vox_offset = static_cast<float>(kDataOffset);
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::array<char, 4> magic{'n', '+', '1', '\0'};
  bool big_endian = false;
};

/// Parses and validates the first 348 bytes. Throws ParseError naming the
/// field: "sizeof_hdr", "magic", "datatype", "dim", "vox_offset".
Header parse_header(const std::uint8_t* bytes, std::size_t size);
std::array<std::uint8_t, kHeaderSize> encode_header(const Header& h);

/// Reads a single uncompressed 3-D float32 image as a [1,1,D,H,W] volume.
Volume read_nifti1(const std::filesystem::path& path);
/// Writes a single-channel [1,1,D,H,W] volume, little-endian.
void write_nifti1(const Volume& volume, const std::filesystem::path& path);

}  // namespace xhved::nifti
