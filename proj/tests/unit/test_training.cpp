#include "doctest.h"

#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "xhved/checkpoint.hpp"
#include "xhved/dataset.hpp"
#include "xhved/losses.hpp"
#include "xhved/optimizer.hpp"
#include "xhved/trainer.hpp"

using namespace xhved;
namespace fs = std::filesystem;

namespace {

std::vector<Case> phantom_cases(std::size_t n, std::size_t side = 16) {
  std::vector<Case> cases;
  const auto vols = generate_phantom_set(n, {side, side, side}, 5);
  for (std::size_t i = 0; i < vols.size(); ++i) cases.push_back(make_case(vols[i], "c" + std::to_string(i)));
  return cases;
}

TrainConfig small_config() {
  TrainConfig c;
  c.batch_size = 1;
  c.learning_rate = 1e-3;
  c.seed = 3;
  return c;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_parameters(const ParamList<float>& a, const ParamList<float>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name) return false;
    const auto x = a[i].tensor.data(), y = b[i].tensor.data();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "xhved_test_training";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("subset sampling") {
  Rng rng(17);
  std::array<int, 16> counts{};
  const int n = 15000;
  for (int i = 0; i < n; ++i) ++counts[sample_subset(rng, SubsetStrategy::uniform15).code()];
  CHECK(counts[0] == 0);
  double chi2 = 0.0;
  for (int c = 1; c < 16; ++c) {
    CHECK(std::abs(counts[c] - 1000) <= 150);
    chi2 += (counts[c] - 1000.0) * (counts[c] - 1000.0) / 1000.0;
  }
  // 14 degrees of freedom, p = 0.001
  CHECK(chi2 < 36.12);
  for (int i = 0; i < 50; ++i) CHECK(sample_subset(rng, SubsetStrategy::full_only) == ModalitySubset::full());
  CHECK(parse_strategy("full_only") == SubsetStrategy::full_only);
  CHECK_THROWS_AS(parse_strategy("half"), ContractViolation);
  CHECK(parse_phase("pretrain") == Phase::pretrain);
  CHECK_THROWS_AS(parse_phase("warmup"), ContractViolation);
}

TEST_CASE("dice loss hand cases") {
  const Shape s{1, 1, 2, 2, 2};
  const Tensor<double> ones(s, 1.0), zeros(s, 0.0);
  CHECK(dice_loss(ones, ones).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(dice_loss(zeros, zeros).item() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(dice_loss(zeros, ones).item() == doctest::Approx(1.0 - kDiceEps / (8.0 + kDiceEps)));
  const Tensor<double> half(s, 0.5);
  CHECK(dice_loss(half, ones).item() == doctest::Approx(1.0 - (8.0 + kDiceEps) / (12.0 + kDiceEps)));

  // region channels are averaged
  Tensor<double> two(Shape{1, 2, 1, 1, 2}, std::vector<double>{1, 1, 0, 0});
  Tensor<double> tgt(Shape{1, 2, 1, 1, 2}, std::vector<double>{1, 1, 1, 1});
  CHECK(dice_loss(two, tgt).item() == doctest::Approx(0.5 * (1.0 - kDiceEps / (2.0 + kDiceEps))));
  CHECK_THROWS_AS(dice_loss(ones, two), ContractViolation);
}

TEST_CASE("total loss reduces to dice without auxiliary terms") {
  Rng rng(8);
  const Shape seg_shape{1, 3, 2, 2, 2};
  Tensor<double> seg(seg_shape), labels(seg_shape);
  for (auto& v : seg.values()) v = rng.uniform();
  for (auto& v : labels.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  const auto recon = randn<double>(Shape{1, 4, 2, 2, 2}, rng), images = randn<double>(Shape{1, 4, 2, 2, 2}, rng);
  std::array<LatentGaussian<double>, 4> lat;
  for (std::size_t l = 0; l < 4; ++l)
    lat[l] = {randn<double>(Shape{1, 2}, rng), randn<double>(Shape{1, 2}, rng), l, -1};
  const auto t = total_loss(seg, recon, lat, labels, images, 0.0, 0.0);
  CHECK(t.total.item() == dice_loss(seg, labels).item());
  const auto full = total_loss(seg, recon, lat, labels, images, 0.3, 0.02);
  CHECK(full.total.item() ==
        doctest::Approx(full.dice.item() + 0.3 * full.rec.item() + 0.02 * full.kl.item()).epsilon(1e-14));
  CHECK(full.rec.item() == doctest::Approx(mse(recon, images).item()));
  const auto pre = total_loss(seg, recon, lat, labels, images, 1.0, 0.0, 0.0);
  CHECK(pre.total.item() == doctest::Approx(pre.rec.item()).epsilon(1e-15));
}

TEST_CASE("adam minimizes a quadratic") {
  Tensor<double> x(Shape{3}, std::vector<double>{0.0, -2.0, 5.0});
  x.set_requires_grad(true);
  Adam<double> adam({{"x", x}}, AdamOptions{0.05, 0.9, 0.999, 1e-8, 0.0});
  const std::vector<double> target{3.0, 1.0, -1.0};
  for (int i = 0; i < 2000; ++i) {
    adam.zero_grad();
    const Tensor<double> t(Shape{3}, target);
    mse(x, t).backward();
    adam.step();
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.values()[i] == doctest::Approx(target[i]).epsilon(1e-3));
  CHECK(adam.steps() == 2000);

  // a parameter without gradient stays put
  Tensor<double> y(Shape{1}, 4.0);
  y.set_requires_grad(true);
  Tensor<double> z(Shape{1}, 1.0);
  z.set_requires_grad(true);
  Adam<double> two({{"y", y}, {"z", z}}, AdamOptions{0.1});
  mse(z, Tensor<double>(Shape{1}, 0.0)).backward();
  two.step();
  CHECK(y.values()[0] == 4.0);
  CHECK(z.values()[0] < 1.0);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
  c = TrainConfig{};
  c.lambda_kl = -1.0;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
  CHECK_THROWS_AS(Trainer(TrainConfig{}, {}), ContractViolation);
}

TEST_CASE("checkpoint round trip and corruption") {
  Trainer t(small_config(), phantom_cases(2));
  t.run(Phase::joint, 2);
  const auto a = scratch("a.ckpt"), b = scratch("b.ckpt");
  save_checkpoint(t.checkpoint(), a);
  const auto loaded = load_checkpoint(a);
  CHECK(loaded.step == 2);
  CHECK(loaded.model == t.model().config());
  CHECK(same_parameters(loaded.parameters, t.model().parameters()));
  save_checkpoint(loaded, b);
  CHECK(read_bytes(a) == read_bytes(b));

  auto bytes = read_bytes(a);
  const auto bad = scratch("bad.ckpt");
  auto write = [&](const std::vector<char>& v) {
    std::ofstream out(bad, std::ios::binary);
    out.write(v.data(), static_cast<std::streamsize>(v.size()));
  };
  auto field_of = [&]() -> std::string {
    try {
      load_checkpoint(bad);
    } catch (const ParseError& e) {
      return e.field();
    }
    return "";
  };
  auto flipped = bytes;
  flipped[0] = 'Y';
  write(flipped);
  CHECK(field_of() == "magic");
  write(std::vector<char>(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2)));
  CHECK(field_of() == "truncated");
  auto extra = bytes;
  extra.push_back('x');
  write(extra);
  CHECK(field_of() == "trailing");
  CHECK_THROWS_AS(load_checkpoint(scratch("missing.ckpt")), IoError);
}

TEST_CASE("pretraining leaves frozen parameters untouched") {
  Trainer t(small_config(), phantom_cases(2));
  auto before = t.checkpoint().parameters;
  t.run(Phase::pretrain, 3);
  const auto after = t.model().parameters();
  std::size_t frozen = 0, moved = 0;
  for (std::size_t i = 0; i < after.size(); ++i) {
    const bool same = std::memcmp(before[i].tensor.data().data(), after[i].tensor.data().data(),
                                  after[i].tensor.numel() * sizeof(float)) == 0;
    if (frozen_in_pretrain(after[i].name)) {
      ++frozen;
      CHECK_MESSAGE(same, after[i].name);
    } else {
      moved += !same;
    }
  }
  CHECK(frozen > 0);
  CHECK(moved > 0);
  // joint training then updates them
  t.run(Phase::joint, 1);
  bool changed = false;
  for (std::size_t i = 0; i < after.size(); ++i)
    if (frozen_in_pretrain(after[i].name))
      changed = changed || std::memcmp(before[i].tensor.data().data(), after[i].tensor.data().data(),
                                       after[i].tensor.numel() * sizeof(float)) != 0;
  CHECK(changed);
}

TEST_CASE("training is deterministic and resumes bit-exactly") {
  const auto cases = phantom_cases(2);
  Trainer a(small_config(), cases), b(small_config(), cases);
  const auto la = a.run(Phase::joint, 4);
  const auto lb = b.run(Phase::joint, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(la[i].loss == lb[i].loss);
  CHECK(same_parameters(a.model().parameters(), b.model().parameters()));

  Trainer first(small_config(), cases);
  first.run(Phase::joint, 2);
  const auto path = scratch("resume.ckpt");
  save_checkpoint(first.checkpoint(), path);
  Trainer resumed(small_config(), cases, load_checkpoint(path));
  CHECK(resumed.steps_done() == 2);
  const auto lr = resumed.run(Phase::joint, 2);
  CHECK(lr[0].step == 3);
  CHECK(lr[0].loss == la[2].loss);
  CHECK(lr[1].loss == la[3].loss);
  CHECK(same_parameters(resumed.model().parameters(), a.model().parameters()));
  CHECK(same_parameters(resumed.checkpoint().optimizer_state, a.checkpoint().optimizer_state));
}

TEST_CASE("log rows") {
  StepMetrics m;
  m.step = 7;
  m.loss = 0.5;
  CHECK(format_log_row(m) == "7,joint,0.5,0,0,0,0");
  CHECK(std::string(kTrainLogHeader).rfind("step,phase,", 0) == 0);
}

TEST_CASE("all module toggles off still trains") {
  auto cfg = small_config();
  cfg.save_attention = false;
  cfg.vila = false;
  cfg.sfeca = false;
  Trainer t(cfg, phantom_cases(1));
  const auto m = t.run(Phase::joint, 2);
  CHECK(std::isfinite(m.back().loss));
  CHECK(!t.model().config().vila);
  for (const auto& p : t.model().parameters()) CHECK(p.name.find("dusfe") == std::string::npos);
}
