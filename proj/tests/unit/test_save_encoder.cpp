#include "doctest.h"

#include <cmath>

#include "xhved/gradcheck.hpp"
#include "xhved/save_encoder.hpp"

using namespace xhved;

namespace {

using G = LatentGaussian<double>;

G gaussian(std::vector<double> mu, std::vector<double> var, int source) {
  const Shape s{mu.size()};
  std::vector<double> lv(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) lv[i] = std::log(var[i]);
  return G{Tensor<double>(s, std::move(mu)), Tensor<double>(s, std::move(lv)), 0, source};
}

// Log of the (unnormalized) product density at x, evaluated term by term.
double log_product(const std::vector<G>& experts, bool prior, std::size_t i, double x) {
  double acc = prior ? -0.5 * x * x : 0.0;
  for (const auto& e : experts) {
    const double var = std::exp(e.logvar.values()[i]);
    const double d = x - e.mu.values()[i];
    acc += -0.5 * d * d / var;
  }
  return acc;
}

}  // namespace

TEST_CASE("product of Gaussians closed forms") {
  const auto one = pog_fuse<double>({gaussian({0}, {1}, 0)}, true);
  CHECK(one.mu.item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::exp(one.logvar.item()) == doctest::Approx(0.5).epsilon(1e-12));

  const auto two = pog_fuse<double>({gaussian({1}, {1}, 0), gaussian({3}, {1}, 1)}, true);
  CHECK(std::abs(two.mu.item() - 4.0 / 3.0) < 1e-6);
  CHECK(std::abs(std::exp(two.logvar.item()) - 1.0 / 3.0) < 1e-6);
}

TEST_CASE("product of Gaussians matches the product density") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<G> experts;
    const int k = 1 + int(rng.below(4));
    for (int m = 0; m < k; ++m)
      experts.push_back({randn<double>(Shape{10}, rng, 2.0), randn<double>(Shape{10}, rng), 0, m});
    const bool prior = trial % 2 == 0;
    const auto fused = pog_fuse(experts, prior);
    for (std::size_t i = 0; i < 10; ++i) {
      // the log density is a quadratic a·x² + b·x + c; read off vertex and curvature
      const double f0 = log_product(experts, prior, i, 0.0), f1 = log_product(experts, prior, i, 1.0),
                   fm = log_product(experts, prior, i, -1.0);
      const double a = 0.5 * (f1 + fm) - f0, b = 0.5 * (f1 - fm);
      CHECK(fused.mu.values()[i] == doctest::Approx(-b / (2 * a)).epsilon(1e-9));
      CHECK(std::exp(fused.logvar.values()[i]) == doctest::Approx(-1.0 / (2 * a)).epsilon(1e-9));
    }
  }
}

TEST_CASE("product of Gaussians ignores expert order") {
  Rng rng(12);
  std::vector<G> experts;
  for (int m = 0; m < 4; ++m) experts.push_back({randn<double>(Shape{16}, rng), randn<double>(Shape{16}, rng), 0, m});
  const auto ref = pog_fuse(experts, true);
  std::vector<G> shuffled{experts[2], experts[0], experts[3], experts[1]};
  const auto other = pog_fuse(shuffled, true);
  CHECK(ref.mu.values() == other.mu.values());
  CHECK(ref.logvar.values() == other.logvar.values());
}

TEST_CASE("adding an expert never increases the fused variance") {
  Rng rng(13);
  for (int draw = 0; draw < 1000; ++draw) {
    std::vector<G> experts;
    for (int m = 0; m < 4; ++m) experts.push_back({randn<double>(Shape{4}, rng), randn<double>(Shape{4}, rng, 3.0), 0, m});
    const unsigned code = 1 + unsigned(rng.below(15));
    const auto subset = ModalitySubset::from_code(code);
    std::vector<G> chosen, more;
    const auto extra = static_cast<std::size_t>(rng.below(4));
    for (std::size_t m = 0; m < 4; ++m) {
      if (subset.has(static_cast<Modality>(m))) chosen.push_back(experts[m]);
      if (subset.has(static_cast<Modality>(m)) || m == extra) more.push_back(experts[m]);
    }
    const auto a = pog_fuse(chosen, draw % 2 == 0), b = pog_fuse(more, draw % 2 == 0);
    for (std::size_t i = 0; i < 4; ++i) REQUIRE(b.logvar.values()[i] <= a.logvar.values()[i]);
  }
}

TEST_CASE("reparameterization") {
  Rng rng(14);
  const G g{randn<double>(Shape{8}, rng), randn<double>(Shape{8}, rng), 0, -1};
  CHECK(reparameterize(g, Tensor<double>(Shape{8}), LatentMode::sample).values() == g.mu.values());
  CHECK(reparameterize(g, randn<double>(Shape{8}, rng), LatentMode::mean).values() == g.mu.values());

  const auto eps = randn<double>(Shape{8}, rng);
  auto mu = g.mu, lv = g.logvar;
  mu.set_requires_grad(true);
  lv.set_requires_grad(true);
  ops::sum(reparameterize(G{mu, lv, 0, -1}, eps, LatentMode::sample)).backward();
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(mu.grad()[i] == 1.0);
    CHECK(lv.grad()[i] == doctest::Approx(0.5 * std::exp(0.5 * lv.values()[i]) * eps.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("KL to the standard normal") {
  const G zero{Tensor<double>(Shape{1, 3}), Tensor<double>(Shape{1, 3}), 0, -1};
  CHECK(kl_standard_normal(zero).item() == 0.0);
  const G unit{Tensor<double>(Shape{1, 1}, 1.0), Tensor<double>(Shape{1, 1}, 0.0), 0, -1};
  CHECK(std::abs(kl_standard_normal(unit).item() - 0.5) <= 1e-7);

  Rng rng(15);
  double worst_min = 0.0;
  for (int t = 0; t < 10000; ++t) {
    const G g{randn<double>(Shape{2, 3}, rng, 2.0), randn<double>(Shape{2, 3}, rng, 2.0), 0, -1};
    const double kl = kl_standard_normal(g).item();
    worst_min = std::min(worst_min, kl);
    if (t < 50) {
      double expect = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        const double m = g.mu.values()[i], l = g.logvar.values()[i];
        expect += 0.5 * (m * m + std::exp(l) - 1.0 - l);
      }
      CHECK(kl == doctest::Approx(expect / 2.0).epsilon(1e-12));
    }
  }
  CHECK(worst_min >= 0.0);
}

TEST_CASE("spatial attention with a zero conv halves the input") {
  Rng rng(16);
  SpatialAttention<double> att(rng);
  att.conv().zero();
  const auto f = randn<double>(Shape{2, 3, 4, 4, 4}, rng);
  const auto out = att(f);
  CHECK(out.shape() == f.shape());
  for (std::size_t i = 0; i < f.numel(); ++i) CHECK(out.values()[i] == 0.5 * f.values()[i]);
}

TEST_CASE("dimension reduction") {
  Rng rng(17);
  DimensionReduction<double> drb(64, rng);
  const auto f = randn<double>(Shape{1, 64, 2, 3, 2}, rng);
  CHECK(drb(f).shape() == Shape{1, 32, 2, 3, 2});
  drb.conv().zero();
  const auto reduced = drb(f);
  for (double v : reduced.values()) CHECK(v == 0.0);
}

TEST_CASE("modality encoder shapes and zero heads") {
  Rng rng(18);
  ModalityEncoder<double> enc({8, 16, 32, 64}, true, rng);
  enc.zero_heads();
  const auto out = enc(Tensor<double>(Shape{1, 1, 16, 16, 16}));
  for (std::size_t l = 0; l < 4; ++l) {
    const std::size_t c = std::size_t{8} << l, e = 16 >> l;
    CHECK(out.features[l].shape() == Shape{1, c, e, e, e});
    CHECK(out.gaussians[l].mu.shape() == Shape{1, c, e, e, e});
    for (double v : out.gaussians[l].mu.values()) CHECK(v == 0.0);
    for (double v : out.gaussians[l].logvar.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("gradient of the deepest mean with respect to the input") {
  Rng rng(19);
  ModalityEncoder<double> enc({2, 2, 4, 4}, true, rng);
  const auto x = randn<double>(Shape{1, 1, 8, 8, 8}, rng);
  std::function<Tensor<double>()> f = [&] { return ops::sum(enc(x).gaussians[3].mu); };
  FdOptions o;
  o.step = 3e-4;
  o.order = 6;
  o.tolerance = 1e-6;
  const auto rep = check_gradients<double, double>(f, {x}, f, {x}, {"x"}, o).front();
  CHECK_MESSAGE(rep.pass, rep.max_rel_err);
}

TEST_CASE("subset fusion") {
  Rng rng(20);
  SaveEncoder<double> enc({4, 4, 8, 8}, true, true, rng);
  const auto images = randn<double>(Shape{1, 4, 8, 8, 8}, rng);
  const auto full = enc(images, ModalitySubset::full(), LatentMode::mean, nullptr);
  std::array<EncoderOutput<double>, 4> per;
  for (std::size_t m = 0; m < 4; ++m)
    per[m] = enc.encoder(static_cast<Modality>(m))(channel_slice(images, m), int(m));
  for (std::size_t l = 0; l < 4; ++l) {
    const auto ref = pog_fuse<double>({per[0].gaussians[l], per[1].gaussians[l], per[2].gaussians[l], per[3].gaussians[l]}, true);
    CHECK(full.fused[l].mu.values() == ref.mu.values());
    CHECK(full.fused[l].logvar.values() == ref.logvar.values());
    if (l < 3) CHECK(full.skips[l].values() == ref.mu.values());
  }

  // a single modality is shrunk toward zero by the prior
  const auto t1c = enc(images, ModalitySubset::parse("0010"), LatentMode::mean, nullptr);
  for (std::size_t l = 0; l < 4; ++l) {
    const auto& g = per[2].gaussians[l];
    for (std::size_t i = 0; i < g.mu.numel(); ++i) {
      const double lambda = std::exp(-g.logvar.values()[i]);
      CHECK(t1c.fused[l].mu.values()[i] == doctest::Approx(g.mu.values()[i] * lambda / (lambda + 1)).epsilon(1e-12));
    }
  }

  // adding a modality never widens the posterior
  for (unsigned code = 1; code < 15; ++code) {
    const auto s = ModalitySubset::from_code(code);
    const auto a = enc(images, s, LatentMode::mean, nullptr);
    for (Modality m : kAllModalities) {
      if (s.has(m)) continue;
      const auto b = enc(images, s.with(m), LatentMode::mean, nullptr);
      for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t i = 0; i < a.fused[l].logvar.numel(); ++i)
          REQUIRE(b.fused[l].logvar.values()[i] <= a.fused[l].logvar.values()[i]);
    }
  }
}
