#include "doctest.h"

#include <cmath>

#include "xhved/gradcheck.hpp"
#include "xhved/layers.hpp"
#include "xhved/ops.hpp"
#include "xhved/rng.hpp"

using namespace xhved;

namespace {

Tensor<double> filled(Shape s, std::vector<double> v) { return Tensor<double>(std::move(s), std::move(v)); }

}  // namespace

TEST_CASE("conv3d identity and counting kernels") {
  Rng rng(1);
  const auto x = randn<double>(Shape{1, 1, 3, 4, 5}, rng);
  const auto y = ops::conv3d(x, filled({1, 1, 1, 1, 1}, {1.0}), Tensor<double>(), 1, 0);
  CHECK(y.values() == x.values());

  const Tensor<double> ones(Shape{1, 1, 5, 5, 5}, 1.0);
  const auto c = ops::conv3d(ones, Tensor<double>(Shape{1, 1, 3, 3, 3}, 1.0), Tensor<double>(), 1, 1);
  for (std::size_t d = 1; d < 4; ++d)
    for (std::size_t h = 1; h < 4; ++h)
      for (std::size_t w = 1; w < 4; ++w) CHECK(c.values()[(d * 5 + h) * 5 + w] == 27.0);
  CHECK(c.values()[0] == 8.0);
}

TEST_CASE("conv3d matches a direct loop on every code path") {
  Rng rng(2);
  // (cin, cout, k, stride): pointwise, small-cout stencil, im2col, strided
  const std::size_t cases[][4] = {{3, 5, 1, 1}, {2, 1, 7, 1}, {2, 2, 3, 1}, {4, 6, 3, 1}, {3, 4, 3, 2}};
  for (const auto& cs : cases) {
    const std::size_t cin = cs[0], cout = cs[1], k = cs[2], stride = cs[3], pad = (k - 1) / 2;
    const std::size_t n = 6, o = (n + 2 * pad - k) / stride + 1;
    const auto x = randn<double>(Shape{2, cin, n, n, n}, rng);
    const auto w = randn<double>(Shape{cout, cin, k, k, k}, rng);
    const auto b = randn<double>(Shape{cout}, rng);
    const auto y = ops::conv3d(x, w, b, stride, pad);
    REQUIRE(y.shape() == Shape{2, cout, o, o, o});
    double worst = 0.0;
    for (std::size_t bi = 0; bi < 2; ++bi)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t od = 0; od < o; ++od)
          for (std::size_t oh = 0; oh < o; ++oh)
            for (std::size_t ow = 0; ow < o; ++ow) {
              double acc = b.values()[co];
              for (std::size_t ci = 0; ci < cin; ++ci)
                for (std::size_t a = 0; a < k; ++a)
                  for (std::size_t bb = 0; bb < k; ++bb)
                    for (std::size_t c = 0; c < k; ++c) {
                      const long d = long(od * stride + a) - long(pad), h = long(oh * stride + bb) - long(pad),
                                 ww = long(ow * stride + c) - long(pad);
                      if (d < 0 || h < 0 || ww < 0 || d >= long(n) || h >= long(n) || ww >= long(n)) continue;
                      acc += w.values()[(((co * cin + ci) * k + a) * k + bb) * k + c] *
                             x.values()[(((bi * cin + ci) * n + d) * n + h) * n + ww];
                    }
              const double got = y.values()[(((bi * cout + co) * o + od) * o + oh) * o + ow];
              worst = std::max(worst, std::abs(got - acc));
            }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("linear hand cases") {
  const auto x = filled({1, 2}, {1, 2});
  CHECK(ops::linear(x, filled({2, 2}, {1, 0, 0, 1}), filled({2}, {0, 0})).values() == x.values());
  CHECK(ops::linear(x, filled({2, 2}, {1, 1, 0, 1}), filled({2}, {0, 0})).values() == std::vector<double>{3, 2});
}

TEST_CASE("softmax and sigmoid") {
  CHECK(ops::softmax(filled({2}, {0, 0}), 0).values() == std::vector<double>{0.5, 0.5});
  Rng rng(3);
  const auto x = randn<double>(Shape{3, 5}, rng);
  const auto a = ops::softmax(x, 1), b = ops::softmax(ops::add_scalar(x, 7.25), 1);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-14));
  const auto s = ops::sigmoid(filled({3}, {-1, 0, 1}));
  CHECK(s.values()[0] == doctest::Approx(0.26894).epsilon(1e-5));
  CHECK(s.values()[1] == 0.5);
  CHECK(s.values()[2] == doctest::Approx(0.73106).epsilon(1e-5));
}

TEST_CASE("group norm edge cases") {
  const Tensor<double> x(Shape{1, 2, 2, 2, 2}, 3.0);
  const Tensor<double> one(Shape{2}, 1.0), zero(Shape{2}, 0.0);
  const auto flat = ops::group_norm(x, 1, one, zero);
  for (double v : flat.values()) CHECK(v == 0.0);
  Rng rng(4);
  const auto r = randn<double>(Shape{1, 2, 2, 2, 2}, rng);
  const auto shifted = ops::group_norm(r, 2, zero, filled({2}, {0.7, 0.7}));
  for (double v : shifted.values()) CHECK(v == 0.7);
}

TEST_CASE("resampling") {
  const Tensor<double> c(Shape{1, 1, 4, 4, 4}, 2.5);
  const auto d = ops::resample(c, ops::Resample::down2);
  CHECK(d.shape() == Shape{1, 1, 2, 2, 2});
  for (double v : d.values()) CHECK(v == 2.5);
  std::vector<double> block(8);
  for (int i = 0; i < 8; ++i) block[i] = i;
  CHECK(ops::resample(filled({1, 1, 2, 2, 2}, block), ops::Resample::down2).item() == 3.5);

  Rng rng(5);
  const auto coarse = randn<double>(Shape{1, 2, 2, 2, 2}, rng);
  const auto blocky = ops::resample(coarse, ops::Resample::up2);
  const auto again = ops::resample(ops::resample(blocky, ops::Resample::down2), ops::Resample::up2);
  for (std::size_t i = 0; i < blocky.numel(); ++i)
    CHECK(again.values()[i] == doctest::Approx(blocky.values()[i]).epsilon(1e-15));
}

TEST_CASE("autograd basics") {
  Rng rng(6);
  auto x = randn<double>(Shape{2, 3}, rng);
  auto y = randn<double>(Shape{2, 3}, rng);
  x.set_requires_grad(true);
  ops::sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  ops::sum(ops::mul(x, y)).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == y.values()[i]);

  // a tensor used twice accumulates both contributions
  x.zero_grad();
  ops::sum(ops::add(x, x)).backward();
  for (double g : x.grad()) CHECK(g == 2.0);

  NoGradGuard guard;
  CHECK(ops::mul(x, y).is_leaf());
}

TEST_CASE("non-finite results and bad shapes are rejected") {
  CHECK_THROWS_AS(ops::log(filled({1}, {-1.0})), NumericError);
  CHECK_THROWS_AS(ops::add(Tensor<double>(Shape{2}), Tensor<double>(Shape{3})), ContractViolation);
  CHECK_THROWS_AS(ops::conv3d(Tensor<double>(Shape{1, 2, 4, 4, 4}), Tensor<double>(Shape{1, 3, 3, 3, 3}),
                              Tensor<double>(), 1, 1),
                  ContractViolation);
}

TEST_CASE("finite differences: hand cases") {
  const std::vector<double> theta{1.0, 2.0};
  auto squares = [](std::span<const double> t) { return t[0] * t[0] + t[1] * t[1]; };
  FdOptions o;
  o.order = 2;
  const auto rep = finite_diff_check(squares, theta, std::vector<double>{2.0, 4.0}, o);
  CHECK(rep.pass);
  CHECK(rep.checked == 2);
  CHECK(rep.max_rel_err < 1e-9);
  const auto flat = finite_diff_check([](std::span<const double>) { return 3.0; }, theta,
                                      std::vector<double>{0.0, 0.0}, o);
  CHECK(flat.pass);
}

TEST_CASE("finite differences catch a wrong gradient") {
  Rng rng(7);
  const auto x = randn<double>(Shape{4, 4}, rng);
  const auto w = randn<double>(Shape{4, 4}, rng);
  // square() with a backward rule that is off by 1e-4 relative
  std::function<Tensor<double>()> wrong = [x, w] {
    std::vector<double> v(x.numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x.values()[i] * x.values()[i];
    auto sq = detail::make_result<double>("bad_square", x.shape(), std::move(v), {&x}, [x](const TensorImpl<double>& out) {
      auto* g = x.impl()->grad_buffer();
      for (std::size_t i = 0; i < out.data.size(); ++i) g[i] += out.grad[i] * 2.0 * x.values()[i] * (1 + 1e-4);
    });
    return ops::sum(ops::mul(sq, w));
  };
  std::function<Tensor<double>()> right = [x, w] { return ops::sum(ops::mul(ops::square(x), w)); };
  FdOptions o;
  o.tolerance = 1e-6;
  CHECK_FALSE(check_gradients<double, double>(wrong, {x}, right, {x}, {"x"}, o).front().pass);
  CHECK(check_gradients<double, double>(right, {x}, right, {x}, {"x"}, o).front().pass);
}

TEST_CASE("finite differences skip probes that cross a kink") {
  // θ sits 1e-4 from the leaky-relu kink, inside the ±3h stencil
  const auto x = filled({3}, {1e-4, 0.5, -0.5});
  std::function<Tensor<double>()> f = [x] { return ops::sum(ops::leaky_relu(x, 0.1)); };
  FdOptions o;
  o.step = 1e-3;
  o.tolerance = 1e-9;
  const auto rep = check_gradients<double, double>(f, {x}, f, {x}, {"x"}, o).front();
  CHECK(rep.pass);
  CHECK(rep.checked == 3);  // the kink coordinate is retried with a smaller step
}

TEST_CASE("composite conv -> norm -> sigmoid graph matches finite differences") {
  Rng rng(8);
  Conv3dLayer<float> conv(2, 4, 3, 1, rng);
  GroupNormLayer<float> norm(4);
  Conv3dLayer<double> conv_d(2, 4, 3, 1, rng);
  GroupNormLayer<double> norm_d(4);
  ParamList<float> pf;
  ParamList<double> pd;
  conv.collect("c", pf);
  conv_d.collect("c", pd);
  copy_parameters(pf, pd);
  const auto x = randn<float>(Shape{1, 2, 4, 4, 4}, rng);
  Tensor<double> xd(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) xd.values()[i] = x.values()[i];
  std::function<Tensor<float>()> f = [&] { return ops::sum(ops::sigmoid(norm(conv(x)))); };
  std::function<Tensor<double>()> g = [&] { return ops::sum(ops::sigmoid(norm_d(conv_d(xd)))); };
  FdOptions o;
  o.tolerance = 1e-3;
  const auto reps = check_gradients<float, double>(f, {x, pf[0].tensor}, g, {xd, pd[0].tensor}, {"x", "w"}, o);
  for (const auto& r : reps) CHECK_MESSAGE(r.pass, r.name << " rel " << r.max_rel_err);
}
