#include "doctest.h"

#include <cmath>

#include "xhved/mlstm.hpp"
#include "xhved/vila.hpp"

using namespace xhved;
using namespace xhved::vila;

namespace {

Tensor<double> vec(std::size_t b, std::vector<double> v) {
  const std::size_t d = v.size() / b;
  return Tensor<double>(Shape{b, d}, std::move(v));
}
Tensor<double> gate(double v) { return Tensor<double>(Shape{1}, std::vector<double>{v}); }

// Plain-double transcription of the stabilized recurrence for one sample.
struct Scalar {
  std::vector<double> C, n;
  double m = 0.0;
  std::size_t d;
  explicit Scalar(std::size_t dim) : C(dim * dim, 0.0), n(dim, 0.0), d(dim) {}
  std::vector<double> step(const std::vector<double>& q, std::vector<double> k, const std::vector<double>& v,
                           double it, double ft, double ot) {
    for (double& x : k) x /= std::sqrt(double(d));
    const double logf = -std::log1p(std::exp(-ft));
    const double m2 = std::max(logf + m, it);
    const double i = std::exp(it - m2), f = std::exp(logf + m - m2);
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) C[r * d + c] = f * C[r * d + c] + i * v[r] * k[c];
      n[r] = f * n[r] + i * k[r];
    }
    m = m2;
    double nq = 0.0;
    for (std::size_t r = 0; r < d; ++r) nq += n[r] * q[r];
    const double den = std::max(std::abs(nq), 1.0), og = 1.0 / (1.0 + std::exp(-ot));
    std::vector<double> h(d, 0.0);
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) h[r] += C[r * d + c] * q[c];
      h[r] = og * h[r] / den;
    }
    return h;
  }
};

}  // namespace

TEST_CASE("token order and round trip") {
  Tensor<double> x(Shape{1, 2, 2, 3, 4});
  for (std::size_t i = 0; i < x.numel(); ++i) x.values()[i] = double(i);
  const auto t = flatten_tokens(x);
  CHECK(t.shape() == Shape{1, 24, 2});
  CHECK(t.values()[1 * 2] == 1.0);      // voxel (0,0,1) is token 1
  CHECK(t.values()[4 * 2] == 4.0);      // voxel (0,1,0) is token 4
  CHECK(detokenize(t, {2, 3, 4}).values() == x.values());

  Rng rng(1);
  Tokenizer<double> tok(2, 24, rng);
  tok.set_identity();
  CHECK(detokenize(tok(x), {2, 3, 4}).values() == x.values());
}

TEST_CASE("mlstm zero write") {
  const auto s = MlstmState<double>::zeros(1, 3);
  const auto r = mlstm_step(s, vec(1, {1, 2, 3}), vec(1, {0.5, -1, 2}), vec(1, {0, 0, 0}), gate(0.3), gate(1), gate(0));
  for (double v : r.state.memory.values()) CHECK(v == 0.0);
  for (double v : r.hidden.values()) CHECK(v == 0.0);
}

TEST_CASE("mlstm first step scalar case") {
  const auto r = mlstm_step(MlstmState<double>::zeros(1, 1), vec(1, {1}), vec(1, {1}), vec(1, {1}), gate(0), gate(0), gate(0));
  CHECK(r.state.stabilizer.item() == 0.0);
  CHECK(r.state.memory.item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.state.normalizer.item() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.hidden.item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("mlstm store then retrieve") {
  // d = 1: the retrieved value is v itself
  auto s = MlstmState<double>::zeros(1, 1);
  s = mlstm_step(s, vec(1, {1}), vec(1, {1}), vec(1, {0.8}), gate(0), gate(30), gate(30)).state;
  const auto h1 = mlstm_step(s, vec(1, {1}), vec(1, {1}), vec(1, {5}), gate(-40), gate(30), gate(30)).hidden;
  CHECK(std::abs(h1.item() - 0.8) < 1e-6);

  // d = 2 against the scalar transcription
  Scalar oracle(2);
  auto st = MlstmState<double>::zeros(1, 2);
  const std::vector<double> v{0.3, -0.7};
  oracle.step({1, 0}, {1, 0}, v, 0, 30, 30);
  st = mlstm_step(st, vec(1, {1, 0}), vec(1, {1, 0}), vec(1, v), gate(0), gate(30), gate(30)).state;
  const auto expect = oracle.step({1, 0}, {0, 1}, {2, 2}, -40, 30, 30);
  const auto got = mlstm_step(st, vec(1, {1, 0}), vec(1, {0, 1}), vec(1, {2, 2}), gate(-40), gate(30), gate(30)).hidden;
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(got.values()[i] - expect[i]) < 1e-6);
    CHECK(std::abs(got.values()[i] - v[i] / std::sqrt(2.0)) < 1e-6);
  }
}

TEST_CASE("mlstm matches the scalar transcription on random sequences") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 1 + rng.below(4);
    Scalar oracle(d);
    auto st = MlstmState<double>::zeros(1, d);
    for (int t = 0; t < 12; ++t) {
      auto q = randn<double>(Shape{1, d}, rng), k = randn<double>(Shape{1, d}, rng), v = randn<double>(Shape{1, d}, rng);
      const double it = 3 * rng.normal(), ft = 3 * rng.normal(), ot = rng.normal();
      const auto expect = oracle.step(q.values(), k.values(), v.values(), it, ft, ot);
      auto r = mlstm_step(st, q, k, v, gate(it), gate(ft), gate(ot));
      for (std::size_t i = 0; i < d; ++i) CHECK(r.hidden.values()[i] == doctest::Approx(expect[i]).epsilon(1e-10));
      st = r.state;
    }
  }
}

TEST_CASE("vil block with zero projections is the identity") {
  Rng rng(3);
  VilBlock<double> block(4, Direction::forward, rng);
  block.zero();
  const auto t = randn<double>(Shape{2, 5, 4}, rng);
  const auto out = block(t);
  CHECK(out.shape() == t.shape());
  CHECK(out.values() == t.values());
}

TEST_CASE("streaming over chunks is bit-exact") {
  Rng rng(4);
  for (auto dir : {Direction::forward, Direction::backward}) {
    VilBlock<double> block(4, dir, rng);
    const auto t = randn<double>(Shape{1, 128, 4}, rng);
    const auto whole = block.run(t, nullptr);
    std::array<Tensor<double>, 4> parts;
    MlstmState<double> carry = MlstmState<double>::zeros(1, 4);
    for (std::size_t c = 0; c < 4; ++c) {
      const std::size_t chunk = dir == Direction::forward ? c : 3 - c;
      auto r = block.run(ops::narrow(t, 1, chunk * 32, 32), &carry);
      parts[chunk] = r.tokens;
      carry = r.state;
    }
    const auto joined = ops::concat<double>({parts[0], parts[1], parts[2], parts[3]}, 1);
    CHECK(joined.values() == whole.tokens.values());
    CHECK(carry.memory.values() == whole.state.memory.values());
  }
}

TEST_CASE("vila gate") {
  Rng rng(5);
  Vila<double> vila(4, {2, 2, 2}, 2, rng);
  const auto x = randn<double>(Shape{2, 4, 2, 2, 2}, rng);
  const auto g = vila.gate(x);
  CHECK(vila(x).shape() == x.shape());
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t v = 0; v < 8; ++v) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += g.values()[(b * 4 + c) * 8 + v];
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }

  for (auto& block : vila.blocks) block.zero();
  vila.tokenizer.set_identity();
  // identity tokens make the gate softmax(x) over channels; it is uniform
  // when x is constant across channels
  Tensor<double> flat(Shape{1, 4, 2, 2, 2});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t v = 0; v < 8; ++v) flat.values()[c * 8 + v] = 0.1 * double(v) - 0.3;
  const auto out = vila(flat);
  for (std::size_t i = 0; i < flat.numel(); ++i) CHECK(out.values()[i] == doctest::Approx(flat.values()[i] * 1.25).epsilon(1e-15));

  // a zero tokenizer projection gives uniform gates for any input
  vila.tokenizer.projection.zero();
  vila.tokenizer.position = Tensor<double>(vila.tokenizer.position.shape());
  const auto uniform = vila.gate(x);
  for (double v : uniform.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}
