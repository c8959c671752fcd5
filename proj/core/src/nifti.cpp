#include "xhved/nifti.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace xhved::nifti {

namespace {

// Byte offsets within the 348-byte header.
constexpr std::size_t kOffSizeofHdr = 0;
constexpr std::size_t kOffDim = 40;
constexpr std::size_t kOffDatatype = 70;
constexpr std::size_t kOffBitpix = 72;
constexpr std::size_t kOffPixdim = 76;
constexpr std::size_t kOffVoxOffset = 108;
constexpr std::size_t kOffSclSlope = 112;
constexpr std::size_t kOffSclInter = 116;
constexpr std::size_t kOffXyztUnits = 123;
constexpr std::size_t kOffQformCode = 252;
constexpr std::size_t kOffSformCode = 254;
constexpr std::size_t kOffSrow = 280;
constexpr std::size_t kOffMagic = 344;

template <typename V>
V byteswap_value(V v) {
  std::array<std::uint8_t, sizeof(V)> b;
  std::memcpy(b.data(), &v, sizeof(V));
  std::reverse(b.begin(), b.end());
  std::memcpy(&v, b.data(), sizeof(V));
  return v;
}

// Loads a value stored with the given file endianness.
template <typename V>
V load(const std::uint8_t* p, bool big_endian) {
  V v;
  std::memcpy(&v, p, sizeof(V));
  const bool host_big = std::endian::native == std::endian::big;
  return big_endian != host_big ? byteswap_value(v) : v;
}

template <typename V>
void store_le(std::uint8_t* p, V v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap_value(v);
  std::memcpy(p, &v, sizeof(V));
}

}  // namespace

Header parse_header(const std::uint8_t* bytes, std::size_t size) {
  if (size < static_cast<std::size_t>(kHeaderSize))
    throw ParseError("sizeof_hdr", "file shorter than a NIfTI-1 header");
  Header h;
  // dim[0] must be 1..7; anything else means the file uses the other byte order.
  const auto dim0_le = load<std::int16_t>(bytes + kOffDim, false);
  h.big_endian = !(dim0_le >= 1 && dim0_le <= 7);
  h.sizeof_hdr = load<std::int32_t>(bytes + kOffSizeofHdr, h.big_endian);
  if (h.sizeof_hdr != kHeaderSize)
    throw ParseError("sizeof_hdr", "expected 348, found " + std::to_string(h.sizeof_hdr));
  std::memcpy(h.magic.data(), bytes + kOffMagic, 4);
  if (!(h.magic[0] == 'n' && h.magic[1] == '+' && h.magic[2] == '1' && h.magic[3] == '\0'))
    throw ParseError("magic", "expected single-file \"n+1\" magic");
  for (std::size_t i = 0; i < 8; ++i) h.dim[i] = load<std::int16_t>(bytes + kOffDim + 2 * i, h.big_endian);
  h.datatype = load<std::int16_t>(bytes + kOffDatatype, h.big_endian);
  h.bitpix = load<std::int16_t>(bytes + kOffBitpix, h.big_endian);
  if (h.datatype != kFloat32)
    throw ParseError("datatype", "only FLOAT32 (16) is supported, found " + std::to_string(h.datatype));
  for (std::size_t i = 0; i < 8; ++i) h.pixdim[i] = load<float>(bytes + kOffPixdim + 4 * i, h.big_endian);
  h.vox_offset = load<float>(bytes + kOffVoxOffset, h.big_endian);
  h.scl_slope = load<float>(bytes + kOffSclSlope, h.big_endian);
  h.scl_inter = load<float>(bytes + kOffSclInter, h.big_endian);

  if (h.dim[0] < 3 || h.dim[0] > 7) throw ParseError("dim", "image rank must be at least 3");
  for (int i = 1; i <= 3; ++i)
    if (h.dim[i] < 1) throw ParseError("dim", "non-positive extent in dim[" + std::to_string(i) + "]");
  for (int i = 4; i <= h.dim[0]; ++i)
    if (h.dim[i] > 1) throw ParseError("dim", "only single 3-D images are supported");
  if (h.vox_offset < static_cast<float>(kDataOffset))
    throw ParseError("vox_offset", "data offset overlaps the header");
  return h;
}

std::array<std::uint8_t, kHeaderSize> encode_header(const Header& h) {
  std::array<std::uint8_t, kHeaderSize> b{};
  store_le<std::int32_t>(b.data() + kOffSizeofHdr, h.sizeof_hdr);
  for (std::size_t i = 0; i < 8; ++i) store_le<std::int16_t>(b.data() + kOffDim + 2 * i, h.dim[i]);
  store_le<std::int16_t>(b.data() + kOffDatatype, h.datatype);
  store_le<std::int16_t>(b.data() + kOffBitpix, h.bitpix);
  for (std::size_t i = 0; i < 8; ++i) store_le<float>(b.data() + kOffPixdim + 4 * i, h.pixdim[i]);
  store_le<float>(b.data() + kOffVoxOffset, h.vox_offset);
  store_le<float>(b.data() + kOffSclSlope, h.scl_slope);
  store_le<float>(b.data() + kOffSclInter, h.scl_inter);
  b[kOffXyztUnits] = 2;  // millimetres
  // Scanner-anchored affine: diagonal spacing, sform_code = 1.
  store_le<std::int16_t>(b.data() + kOffQformCode, 0);
  store_le<std::int16_t>(b.data() + kOffSformCode, 1);
  for (std::size_t r = 0; r < 3; ++r)
    store_le<float>(b.data() + kOffSrow + 16 * r + 4 * r, h.pixdim[r + 1]);
  std::memcpy(b.data() + kOffMagic, h.magic.data(), 4);
  return b;
}

Volume read_nifti1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kDataOffset)
    throw ParseError("sizeof_hdr", path.string() + " is shorter than 352 bytes");
  const Header h = parse_header(bytes.data(), bytes.size());
  const std::size_t W = static_cast<std::size_t>(h.dim[1]);
  const std::size_t H = static_cast<std::size_t>(h.dim[2]);
  const std::size_t D = static_cast<std::size_t>(h.dim[3]);
  const std::size_t count = D * H * W;
  const std::size_t offset = static_cast<std::size_t>(h.vox_offset);
  if (bytes.size() < offset + count * 4)
    throw ParseError("payload", path.string() + " is truncated: expected " +
                                    std::to_string(count * 4) + " data bytes");
  Volume v{Tensor<float>(Shape{1, 1, D, H, W}), Spacing{}, {ChannelRole::generic}};
  float* out = v.data.data().data();
  const bool rescale = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
  for (std::size_t i = 0; i < count; ++i) {
    float val = load<float>(bytes.data() + offset + 4 * i, h.big_endian);
    if (rescale) val = val * h.scl_slope + h.scl_inter;
    out[i] = val;
  }
  const auto spacing_or_one = [](float p) { return p > 0.0f ? static_cast<double>(p) : 1.0; };
  v.spacing = {spacing_or_one(h.pixdim[3]), spacing_or_one(h.pixdim[2]), spacing_or_one(h.pixdim[1])};
  return v;
}

void write_nifti1(const Volume& volume, const std::filesystem::path& path) {
  require(volume.data.defined() && volume.data.rank() == 5 && volume.data.dim(0) == 1 &&
              volume.data.dim(1) == 1,
          "write_nifti1: volume must hold exactly one 3-D channel");
  require(volume.spacing.d > 0 && volume.spacing.h > 0 && volume.spacing.w > 0,
          "write_nifti1: spacing must be positive");
  const std::size_t D = volume.data.dim(2), H = volume.data.dim(3), W = volume.data.dim(4);
  require(D <= 32767 && H <= 32767 && W <= 32767, "write_nifti1: extent exceeds NIfTI-1 limits");
  Header h;
  h.dim = {3, static_cast<std::int16_t>(W), static_cast<std::int16_t>(H), static_cast<std::int16_t>(D), 1, 1, 1, 1};
  h.pixdim = {1.0f, static_cast<float>(volume.spacing.w), static_cast<float>(volume.spacing.h),
              static_cast<float>(volume.spacing.d), 0.0f, 0.0f, 0.0f, 0.0f};
  const auto header = encode_header(h);
  std::vector<std::uint8_t> bytes(kDataOffset + 4 * volume.data.numel(), 0);
  std::copy(header.begin(), header.end(), bytes.begin());
  const auto values = volume.data.data();
  for (std::size_t i = 0; i < values.size(); ++i) store_le<float>(bytes.data() + kDataOffset + 4 * i, values[i]);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace xhved::nifti
