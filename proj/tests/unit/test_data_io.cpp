#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "xhved/dataset.hpp"
#include "xhved/errors.hpp"
#include "xhved/nifti.hpp"
#include "xhved/phantom.hpp"
#include "xhved/rng.hpp"

using namespace xhved;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("xhved_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t count(const Volume& v, std::size_t ch) {
  const std::size_t n = v.data.numel() / v.data.dim(1);
  std::size_t c = 0;
  for (std::size_t i = 0; i < n; ++i) c += v.data.values()[ch * n + i] != 0.0f;
  return c;
}

}  // namespace

TEST_CASE("phantom labels are nested and non-empty") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Volume v = generate_phantom(random_phantom_spec({32, 32, 32}, seed));
    const std::size_t n = 32 * 32 * 32;
    const float* wt = v.data.values().data() + 4 * n;
    const float* tc = wt + n;
    const float* et = tc + n;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(tc[i] <= wt[i]);
      CHECK(et[i] <= tc[i]);
    }
    for (std::size_t ch = 4; ch < 7; ++ch) CHECK(count(v, ch) > 0);
  }
}

TEST_CASE("phantoms are reproducible from the seed") {
  const auto spec = random_phantom_spec({16, 16, 16}, 42);
  CHECK(generate_phantom(spec).data.values() == generate_phantom(spec).data.values());
  CHECK(generate_phantom(spec).data.values() != generate_phantom(random_phantom_spec({16, 16, 16}, 43)).data.values());
}

TEST_CASE("default phantom WT volume is close to the ellipsoid volume") {
  const PhantomSpec spec;
  const Volume v = generate_phantom(spec);
  const double analytic = analytic_wt_voxels(spec);
  const double a = spec.radii_mm[0];
  CHECK(analytic == doctest::Approx(4.0 / 3.0 * M_PI * a * a * a * spec.aspect[0] * spec.aspect[1] * spec.aspect[2]));
  CHECK(std::abs(double(count(v, 4)) - analytic) <= 0.1 * analytic);
}

TEST_CASE("nifti round trip") {
  const fs::path dir = scratch("nifti");
  Rng rng(1);
  Volume v{randn<float>(Shape{1, 1, 8, 8, 8}, rng), Spacing{1.0, 0.5, 2.0}, {ChannelRole::generic}};
  nifti::write_nifti1(v, dir / "a.nii");
  const Volume back = nifti::read_nifti1(dir / "a.nii");
  CHECK(back.data.shape() == v.data.shape());
  CHECK(back.data.values() == v.data.values());
  CHECK(back.spacing == v.spacing);
}

TEST_CASE("nifti header validation") {
  const fs::path dir = scratch("nifti_bad");
  nifti::Header h;
  h.dim = {3, 2, 2, 2, 1, 1, 1, 1};
  h.pixdim = {1, 1, 1, 1, 0, 0, 0, 0};
  auto write = [&](const nifti::Header& hdr, const fs::path& p) {
    const auto bytes = nifti::encode_header(hdr);
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
    const char pad[4] = {0, 0, 0, 0};
    out.write(pad, 4);
    std::vector<char> payload(8 * 4, 0);
    out.write(payload.data(), payload.size());
  };
  auto field_of = [](const fs::path& p) {
    try {
      nifti::read_nifti1(p);
    } catch (const ParseError& e) {
      return e.field();
    }
    return std::string("accepted");
  };
  nifti::Header bad_magic = h;
  bad_magic.magic = {'n', 'i', '1', '\0'};
  write(bad_magic, dir / "magic.nii");
  CHECK(field_of(dir / "magic.nii") == "magic");

  nifti::Header int16 = h;
  int16.datatype = 4;
  int16.bitpix = 16;
  write(int16, dir / "int16.nii");
  CHECK(field_of(dir / "int16.nii") == "datatype");

  write(h, dir / "ok.nii");
  CHECK(field_of(dir / "ok.nii") == "accepted");
  CHECK_THROWS_AS(nifti::read_nifti1(dir / "missing.nii"), IoError);
}

TEST_CASE("intensity normalization") {
  Rng rng(2);
  Volume v{Tensor<float>(Shape{1, 4, 6, 6, 6}), {}, {ChannelRole::flair, ChannelRole::t1, ChannelRole::t1c, ChannelRole::t2}};
  const std::size_t n = 216;
  for (std::size_t i = 0; i < n; ++i) {
    v.data.values()[i] = i % 3 == 0 ? 0.0f : float(5 + 2 * rng.normal());    // sparse support
    v.data.values()[n + i] = float(rng.uniform(1, 4));
    v.data.values()[2 * n + i] = 0.0f;                                       // constant zero
    v.data.values()[3 * n + i] = float(rng.uniform(-3, 8));
  }
  const Volume z = normalize_intensities(v, ModalitySubset::parse("1110"));
  for (std::size_t ch : {0, 1}) {
    double s = 0, s2 = 0, k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (v.data.values()[ch * n + i] == 0.0f) continue;
      const double x = z.data.values()[ch * n + i];
      s += x;
      s2 += x * x;
      ++k;
    }
    CHECK(std::abs(s / k) < 1e-4);
    CHECK(std::abs(s2 / k - (s / k) * (s / k) - 1.0) < 1e-3);
  }
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(z.data.values()[2 * n + i] == 0.0f);
    CHECK(z.data.values()[3 * n + i] == 0.0f);  // T2 is outside the subset
  }
}

TEST_CASE("case directories round trip") {
  const fs::path dir = scratch("cases");
  const auto vols = generate_phantom_set(2, {8, 8, 8}, 5);
  write_case_dir(vols[1], dir / "b");
  write_case_dir(vols[0], dir / "a");
  fs::create_directories(dir / "not_a_case");
  const Volume back = read_case_dir(dir / "a");
  CHECK(back.data.values() == vols[0].data.values());
  CHECK(back.roles == vols[0].roles);
  CHECK(fs::exists(dir / "a" / "flair.nii"));
  CHECK(fs::exists(dir / "a" / "channels.tsv"));
  const auto cases = load_dataset(dir);
  REQUIRE(cases.size() == 2);
  CHECK(cases[0].id == "a");
  CHECK(cases[1].id == "b");
  CHECK(cases[0].images.shape() == Shape{4, 8, 8, 8});
  CHECK_THROWS_AS(load_dataset(dir / "nowhere"), IoError);
}

TEST_CASE("batches zero absent modalities") {
  std::vector<Case> cases;
  for (const auto& v : generate_phantom_set(2, {8, 8, 8}, 9)) cases.push_back(make_case(v, "c"));
  const auto b = batch_images(cases, {1, 0}, ModalitySubset::parse("fl,t1c"));
  CHECK(b.shape() == Shape{2, 4, 8, 8, 8});
  const std::size_t n = 512;
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(b.values()[i] == cases[1].images.values()[i]);
    CHECK(b.values()[n + i] == 0.0f);
    CHECK(b.values()[4 * n + 2 * n + i] == cases[0].images.values()[2 * n + i]);
    CHECK(b.values()[4 * n + 3 * n + i] == 0.0f);
  }
}

TEST_CASE("subset masks and names are interchangeable") {
  for (const auto s : ModalitySubset::all_nonempty()) {
    CHECK(ModalitySubset::parse(s.mask_string()) == s);
    CHECK(ModalitySubset::parse(s.names()) == s);
  }
  CHECK(ModalitySubset::parse("1011") == ModalitySubset::parse("fl,t1c,t2"));
  CHECK(ModalitySubset::all_nonempty().size() == 15);
  CHECK(ModalitySubset::all_nonempty().front().mask_string() == "0001");
  CHECK_THROWS_AS(ModalitySubset::parse("0000"), ContractViolation);
  CHECK_THROWS_AS(ModalitySubset::parse("10x1"), ContractViolation);
  CHECK_THROWS_AS(ModalitySubset::parse("fl,pd"), ContractViolation);
}
