#include "xhved/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "xhved/nifti.hpp"
#include "xhved/phantom.hpp"
#include "xhved/rng.hpp"

namespace xhved {

namespace fs = std::filesystem;

namespace {
constexpr const char* kManifest = "channels.tsv";
}

std::string channel_file_name(ChannelRole role) {
  std::string s(role_name(role));
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s + ".nii";
}

Case make_case(const Volume& volume, std::string id) {
  volume.validate();
  require(volume.data.dim(0) == 1, "make_case: expected a single-subject volume");
  const Volume norm = normalize_intensities(volume, ModalitySubset::full());
  const std::size_t D = volume.data.dim(2), H = volume.data.dim(3), W = volume.data.dim(4);
  const std::size_t n = D * H * W;
  Case c{std::move(id), Tensor<float>(Shape{4, D, H, W}), Tensor<float>(Shape{3, D, H, W}), volume.spacing};
  const float* src = norm.data.data().data();
  for (std::size_t m = 0; m < 4; ++m) {
    const auto ch = norm.channel_of(modality_role(static_cast<Modality>(m)));
    require(ch.has_value(), "make_case: missing modality channel " +
                                std::string(role_name(modality_role(static_cast<Modality>(m)))));
    std::copy_n(src + *ch * n, n, c.images.data().data() + m * n);
  }
  const ChannelRole label_roles[3] = {ChannelRole::wt, ChannelRole::tc, ChannelRole::et};
  for (std::size_t r = 0; r < 3; ++r) {
    const auto ch = norm.channel_of(label_roles[r]);
    require(ch.has_value(), "make_case: missing label channel " + std::string(role_name(label_roles[r])));
    std::copy_n(src + *ch * n, n, c.labels.data().data() + r * n);
  }
  return c;
}

void write_case_dir(const Volume& volume, const fs::path& dir) {
  volume.validate();
  require(volume.data.dim(0) == 1, "write_case_dir: expected a single-subject volume");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const std::size_t D = volume.data.dim(2), H = volume.data.dim(3), W = volume.data.dim(4);
  const std::size_t n = D * H * W;
  std::ofstream manifest(dir / kManifest, std::ios::trunc);
  if (!manifest) throw IoError("cannot write manifest in " + dir.string());
  for (std::size_t c = 0; c < volume.roles.size(); ++c) {
    Volume single{Tensor<float>(Shape{1, 1, D, H, W}), volume.spacing, {ChannelRole::generic}};
    std::copy_n(volume.data.data().data() + c * n, n, single.data.data().data());
    nifti::write_nifti1(single, dir / channel_file_name(volume.roles[c]));
    manifest << c << '\t' << role_name(volume.roles[c]) << '\n';
  }
}

Volume read_case_dir(const fs::path& dir) {
  std::ifstream manifest(dir / kManifest);
  if (!manifest) throw IoError("missing manifest " + (dir / kManifest).string());
  std::vector<std::pair<std::size_t, ChannelRole>> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw ParseError("manifest", "line " + std::to_string(line_no) + " lacks a tab separator");
    std::size_t index = 0;
    try {
      index = std::stoul(line.substr(0, tab));
    } catch (const std::exception&) {
      throw ParseError("manifest", "line " + std::to_string(line_no) + " has a bad channel index");
    }
    entries.emplace_back(index, parse_role(line.substr(tab + 1)));
  }
  if (entries.empty()) throw ParseError("manifest", "no channels listed in " + dir.string());
  std::sort(entries.begin(), entries.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].first != i) throw ParseError("manifest", "channel indices must be 0..C-1");

  Volume out;
  std::size_t n = 0;
  for (const auto& [index, role] : entries) {
    Volume ch = nifti::read_nifti1(dir / channel_file_name(role));
    if (index == 0) {
      out.data = Tensor<float>(Shape{1, entries.size(), ch.data.dim(2), ch.data.dim(3), ch.data.dim(4)});
      out.spacing = ch.spacing;
      n = ch.data.numel();
    }
    if (ch.data.numel() != n || !(ch.spacing == out.spacing))
      throw ParseError("dim", "channel " + std::string(role_name(role)) + " has a different grid");
    std::copy_n(ch.data.data().data(), n, out.data.data().data() + index * n);
    out.roles.push_back(role);
  }
  return out;
}

std::vector<Case> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("data directory not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / kManifest)) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<Case> cases;
  for (const auto& d : dirs) cases.push_back(make_case(read_case_dir(d), d.filename().string()));
  return cases;
}

std::vector<Volume> generate_phantom_set(std::size_t count, std::array<std::size_t, 3> extent,
                                         std::uint64_t seed) {
  std::vector<Volume> out;
  for (std::size_t i = 0; i < count; ++i)
    out.push_back(generate_phantom(random_phantom_spec(extent, derive_seed(seed, i))));
  return out;
}

Tensor<float> batch_images(const std::vector<Case>& cases, const std::vector<std::size_t>& indices,
                           ModalitySubset subset) {
  require(!indices.empty(), "batch_images: empty batch");
  const auto ext = cases.at(indices[0]).extent();
  const std::size_t n = ext[0] * ext[1] * ext[2];
  Tensor<float> out(Shape{indices.size(), 4, ext[0], ext[1], ext[2]});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Case& c = cases.at(indices[b]);
    require(c.extent() == ext, "batch_images: cases differ in extent");
    for (std::size_t m = 0; m < 4; ++m) {
      if (!subset.has(static_cast<Modality>(m))) continue;
      std::copy_n(c.images.data().data() + m * n, n, out.data().data() + (b * 4 + m) * n);
    }
  }
  return out;
}

Tensor<float> batch_labels(const std::vector<Case>& cases, const std::vector<std::size_t>& indices) {
  require(!indices.empty(), "batch_labels: empty batch");
  const auto ext = cases.at(indices[0]).extent();
  const std::size_t n = 3 * ext[0] * ext[1] * ext[2];
  Tensor<float> out(Shape{indices.size(), 3, ext[0], ext[1], ext[2]});
  for (std::size_t b = 0; b < indices.size(); ++b)
    std::copy_n(cases.at(indices[b]).labels.data().data(), n, out.data().data() + b * n);
  return out;
}

}  // namespace xhved
