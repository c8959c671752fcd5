#include "doctest.h"

#include <cmath>

#include "xhved/sfeca.hpp"

using namespace xhved;

namespace {

void fill(Tensor<double>& t, double v) {
  for (auto& x : t.values()) x = v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("csfe with zero weights halves both branches") {
  Rng rng(1);
  Csfe<double> c(4, rng);
  c.zero();
  const DualFeatures<double> f{randn<double>(Shape{2, 4, 3, 3, 3}, rng), randn<double>(Shape{2, 4, 3, 3, 3}, rng)};
  const auto out = c(f);
  CHECK(out.seg.shape() == f.seg.shape());
  CHECK(out.rec.shape() == f.rec.shape());
  for (std::size_t i = 0; i < f.seg.numel(); ++i) {
    CHECK(out.seg.values()[i] == 0.5 * f.seg.values()[i]);
    CHECK(out.rec.values()[i] == 0.5 * f.rec.values()[i]);
  }
}

TEST_CASE("csfe unit-weight two-channel hand case") {
  Rng rng(2);
  Csfe<double> c(2, rng);
  for (auto* l : {&c.squeeze, &c.seg_head, &c.rec_head}) {
    fill(l->weight, 1.0);
    fill(l->bias, 0.0);
  }
  const DualFeatures<double> f{randn<double>(Shape{1, 2, 2, 2, 2}, rng), randn<double>(Shape{1, 2, 2, 2, 2}, rng)};
  double pooled = 0.0;
  for (double v : f.seg.values()) pooled += v / 8.0;
  for (double v : f.rec.values()) pooled += v / 8.0;
  const double s = pooled > 0 ? pooled : 0.01 * pooled;
  const double g = sigmoid(s);
  const auto out = c(f);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(out.seg.values()[i] == doctest::Approx(g * f.seg.values()[i]).epsilon(1e-12));
    CHECK(out.rec.values()[i] == doctest::Approx(g * f.rec.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("ssfe with zero weights halves both branches") {
  Rng rng(3);
  Ssfe<double> s(4, rng);
  const DualFeatures<double> f{randn<double>(Shape{1, 4, 4, 4, 4}, rng), randn<double>(Shape{1, 4, 4, 4, 4}, rng)};
  const auto g = s.gates(f);
  CHECK(g.seg.shape() == Shape{1, 1, 4, 4, 4});
  CHECK(g.rec.shape() == Shape{1, 1, 4, 4, 4});
  s.zero();
  const auto out = s(f);
  for (std::size_t i = 0; i < f.seg.numel(); ++i) {
    CHECK(out.seg.values()[i] == 0.5 * f.seg.values()[i]);
    CHECK(out.rec.values()[i] == 0.5 * f.rec.values()[i]);
  }
}

TEST_CASE("dusfe block with zero weights scales by 1.25") {
  Rng rng(4);
  DusfeBlock<double> d(4, rng);
  d.zero();
  const DualFeatures<double> f{randn<double>(Shape{1, 4, 4, 4, 4}, rng), randn<double>(Shape{1, 4, 4, 4, 4}, rng)};
  const auto out = d(f);
  CHECK(out.seg.shape() == f.seg.shape());
  for (std::size_t i = 0; i < f.seg.numel(); ++i) {
    CHECK(out.seg.values()[i] == doctest::Approx(1.25 * f.seg.values()[i]).epsilon(1e-15));
    CHECK(out.rec.values()[i] == doctest::Approx(1.25 * f.rec.values()[i]).epsilon(1e-15));
  }
}

TEST_CASE("dual decoder output contract") {
  Rng rng(5);
  for (bool sfeca : {true, false}) {
    DualDecoder<double> dec({8, 16, 32, 64}, sfeca, rng);
    const auto out = dec(randn<double>(Shape{1, 32, 2, 2, 2}, rng),
                         {randn<double>(Shape{1, 8, 16, 16, 16}, rng), randn<double>(Shape{1, 16, 8, 8, 8}, rng),
                          randn<double>(Shape{1, 32, 4, 4, 4}, rng)});
    CHECK(out.seg.shape() == Shape{1, 3, 16, 16, 16});
    CHECK(out.recon.shape() == Shape{1, 4, 16, 16, 16});
    for (double v : out.seg.values()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}
