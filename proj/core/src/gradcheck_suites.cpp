#include "xhved/gradcheck_suites.hpp"

#include <cstdio>
#include <memory>

#include "xhved/losses.hpp"
#include "xhved/model.hpp"

namespace xhved {

namespace {

template <typename T>
struct Fixture {
  std::vector<Tensor<T>> targets;
  std::vector<std::string> names;
  std::vector<Tensor<T>> constants;
  std::function<Tensor<T>()> forward;

  void target(const std::string& name, const Tensor<T>& t) {
    names.push_back(name);
    targets.push_back(t);
  }
  // Σ out ⊙ R for a fixed random R, so every output element matters.
  Tensor<T> probe(const Tensor<T>& out, Rng& rng) {
    constants.push_back(randn<T>(out.shape(), rng));
    return constants.back();
  }
};

template <typename T>
Tensor<T> project(const Tensor<T>& out, const Tensor<T>& weights) {
  return ops::sum(ops::mul(out, weights));
}

template <typename T>
void add_params(Fixture<T>& fx, const ParamList<T>& params) {
  for (const auto& p : params) fx.target(p.name, p.tensor);
}

template <typename T>
void add_sampled(Fixture<T>& fx, const ParamList<T>& params, std::size_t count, std::uint64_t seed) {
  for (std::size_t i : sample_coordinates(params.size(), count, derive_seed(seed, "params")))
    fx.target(params[i].name, params[i].tensor);
}

template <typename T>
using Builder = Fixture<T> (*)(std::uint64_t);

template <typename T>
Fixture<T> conv_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  const std::size_t k = seed % 3 == 2 ? 1 : 3;
  const std::size_t stride = seed % 2 == 0 ? 1 : 2;
  auto layer = std::make_shared<Conv3dLayer<T>>(2, 3, k, stride, rng);
  layer->bias = randn<T>(Shape{3}, rng, 0.1);
  const Tensor<T> x = randn<T>(Shape{2, 2, 4, 4, 4}, rng);
  const Tensor<T> r = fx.probe((*layer)(x), rng);
  fx.target("input", x);
  ParamList<T> ps;
  layer->collect("conv", ps);
  add_params(fx, ps);
  fx.forward = [layer, x, r] { return project((*layer)(x), r); };
  return fx;
}

template <typename T>
Fixture<T> linear_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  auto layer = std::make_shared<LinearLayer<T>>(5, 4, rng);
  layer->bias = randn<T>(Shape{4}, rng, 0.1);
  const Tensor<T> x = randn<T>(Shape{2, 3, 5}, rng);
  const Tensor<T> r = fx.probe((*layer)(x), rng);
  fx.target("input", x);
  ParamList<T> ps;
  layer->collect("linear", ps);
  add_params(fx, ps);
  fx.forward = [layer, x, r] { return project((*layer)(x), r); };
  return fx;
}

template <typename T>
Fixture<T> group_norm_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  const Tensor<T> x = randn<T>(Shape{2, 4, 3, 3, 3}, rng);
  const Tensor<T> gamma = rand_uniform<T>(Shape{4}, rng, 0.5, 1.5);
  const Tensor<T> beta = randn<T>(Shape{4}, rng, 0.1);
  const Tensor<T> r = fx.probe(x, rng);
  fx.target("input", x);
  fx.target("gamma", gamma);
  fx.target("beta", beta);
  fx.forward = [x, gamma, beta, r] { return project(ops::group_norm(x, 2, gamma, beta), r); };
  return fx;
}

// Smooth primitives chained into one scalar: sigmoid, exp, log, softmax,
// layer norm, resampling, channel pooling/broadcasting, concat/narrow.
template <typename T>
Fixture<T> primitives_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  const Tensor<T> x = randn<T>(Shape{2, 3, 4, 4, 4}, rng);
  const Tensor<T> y = rand_uniform<T>(Shape{2, 3, 2, 2, 2}, rng, 0.5, 2.0);
  const Tensor<T> gamma = rand_uniform<T>(Shape{64}, rng, 0.5, 1.5);
  const Tensor<T> beta = randn<T>(Shape{64}, rng, 0.1);
  auto f = [x, y, gamma, beta] {
    const Tensor<T> down = ops::resample(ops::sigmoid(x), ops::Resample::down2);
    const Tensor<T> mixed = ops::div(ops::mul(down, ops::log(y)), ops::add_scalar(ops::exp(ops::scale(y, -0.5)), 1.0));
    const Tensor<T> soft = ops::softmax(mixed, 1);
    const Tensor<T> gated = ops::mul_channel(ops::resample(soft, ops::Resample::up2), ops::global_avg_pool(x));
    const Tensor<T> spatial = ops::mul_spatial(gated, ops::channel_mean(x));
    const Tensor<T> both = ops::concat<T>({spatial, ops::narrow(x, 1, 1, 1)}, 1);
    const Tensor<T> rows = ops::transpose_last2(ops::transpose_last2(ops::reshape(both, Shape{2, 4, 64})));
    return ops::layer_norm(rows, gamma, beta);
  };
  const Tensor<T> r = fx.probe(f(), rng);
  fx.target("x", x);
  fx.target("y", y);
  fx.target("gamma", gamma);
  fx.target("beta", beta);
  fx.forward = [f, r] { return project(f(), r); };
  return fx;
}

template <typename T>
Fixture<T> spatial_attention_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  auto block = std::make_shared<SpatialAttention<T>>(rng);
  block->conv().bias = randn<T>(Shape{1}, rng, 0.1);
  const Tensor<T> f = randn<T>(Shape{1, 3, 4, 4, 4}, rng);
  const Tensor<T> r = fx.probe((*block)(f), rng);
  fx.target("input", f);
  ParamList<T> ps;
  block->collect("attention", ps);
  add_params(fx, ps);
  fx.forward = [block, f, r] { return project((*block)(f), r); };
  return fx;
}

template <typename T>
Fixture<T> drb_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  auto block = std::make_shared<DimensionReduction<T>>(4, rng);
  const Tensor<T> f = randn<T>(Shape{2, 4, 2, 2, 2}, rng);
  const Tensor<T> r = fx.probe((*block)(f), rng);
  fx.target("input", f);
  ParamList<T> ps;
  block->collect("drb", ps);
  add_params(fx, ps);
  fx.forward = [block, f, r] { return project((*block)(f), r); };
  return fx;
}

template <typename T>
Fixture<T> latent_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  std::vector<LatentGaussian<T>> experts;
  for (int m = 0; m < 3; ++m)
    experts.push_back({randn<T>(Shape{2, 2, 2, 2, 2}, rng), randn<T>(Shape{2, 2, 2, 2, 2}, rng), 0, m});
  const Tensor<T> eps = randn<T>(Shape{2, 2, 2, 2, 2}, rng);
  auto f = [experts, eps] {
    const auto fused = pog_fuse(experts, true);
    return std::pair{reparameterize(fused, eps, LatentMode::sample), kl_standard_normal(fused)};
  };
  const Tensor<T> r = fx.probe(f().first, rng);
  fx.constants.push_back(eps);
  for (int m = 0; m < 3; ++m) {
    fx.target("mu" + std::to_string(m), experts[m].mu);
    fx.target("logvar" + std::to_string(m), experts[m].logvar);
  }
  fx.forward = [f, r] {
    const auto [z, kl] = f();
    return ops::add(project(z, r), ops::scale(kl, 0.1));
  };
  return fx;
}

template <typename T>
Fixture<T> mlstm_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  const std::size_t b = 2, d = 3;
  vila::MlstmState<T> s{randn<T>(Shape{b, d, d}, rng), randn<T>(Shape{b, d}, rng),
                        randn<T>(Shape{b}, rng)};
  const Tensor<T> q = randn<T>(Shape{b, d}, rng), k = randn<T>(Shape{b, d}, rng),
                  v = randn<T>(Shape{b, d}, rng);
  const Tensor<T> ig = randn<T>(Shape{b}, rng), fg = randn<T>(Shape{b}, rng, 2.0),
                  og = randn<T>(Shape{b}, rng);
  auto f = [s, q, k, v, ig, fg, og] {
    const auto r1 = vila::mlstm_step(s, q, k, v, ig, fg, og);
    // A second step reads the written state, so the state gradients matter.
    const auto r2 = vila::mlstm_step(r1.state, v, q, k, og, ig, fg);
    return ops::concat<T>({r1.hidden, r2.hidden, ops::reshape(r2.state.memory, Shape{b, d * d}),
                           r2.state.normalizer, ops::reshape(r2.state.stabilizer, Shape{b, 1})},
                          1);
  };
  const Tensor<T> r = fx.probe(f(), rng);
  fx.target("memory", s.memory);
  fx.target("normalizer", s.normalizer);
  fx.target("stabilizer", s.stabilizer);
  fx.target("q", q);
  fx.target("k", k);
  fx.target("v", v);
  fx.target("input_gate", ig);
  fx.target("forget_gate", fg);
  fx.target("output_gate", og);
  fx.forward = [f, r] { return project(f(), r); };
  return fx;
}

template <typename T>
void randomize_norm(LayerNormLayer<T>& n, Rng& rng) {
  n.gamma = rand_uniform<T>(n.gamma.shape(), rng, 0.5, 1.5);
  n.beta = randn<T>(n.beta.shape(), rng, 0.1);
}

template <typename T>
Fixture<T> vil_block_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  auto fwd = std::make_shared<vila::VilBlock<T>>(4, vila::Direction::forward, rng);
  auto bwd = std::make_shared<vila::VilBlock<T>>(4, vila::Direction::backward, rng);
  randomize_norm(fwd->norm, rng);
  randomize_norm(bwd->norm, rng);
  const Tensor<T> t = randn<T>(Shape{2, 8, 4}, rng);
  auto f = [fwd, bwd, t] { return (*bwd)((*fwd)(t)); };
  const Tensor<T> r = fx.probe(f(), rng);
  fx.target("tokens", t);
  ParamList<T> ps;
  fwd->collect("block0", ps);
  bwd->collect("block1", ps);
  add_params(fx, ps);
  fx.forward = [f, r] { return project(f(), r); };
  return fx;
}

template <typename T>
Fixture<T> vila_gate_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  auto block = std::make_shared<vila::Vila<T>>(4, std::array<std::size_t, 3>{2, 2, 2}, 2, rng);
  block->tokenizer.position = randn<T>(block->tokenizer.position.shape(), rng, 0.5);
  const Tensor<T> x = randn<T>(Shape{1, 4, 2, 2, 2}, rng);
  const Tensor<T> r = fx.probe((*block)(x), rng);
  fx.target("input", x);
  ParamList<T> ps;
  block->collect("vila", ps);
  add_params(fx, ps);
  fx.forward = [block, x, r] { return project((*block)(x), r); };
  return fx;
}

template <typename T, typename Block>
Fixture<T> dual_fixture(std::uint64_t seed, Shape shape, const char* name) {
  Rng rng(seed);
  Fixture<T> fx;
  auto block = std::make_shared<Block>(shape[1], rng);
  const DualFeatures<T> in{randn<T>(shape, rng), randn<T>(shape, rng)};
  const auto out = (*block)(in);
  const Tensor<T> r1 = fx.probe(out.seg, rng), r2 = fx.probe(out.rec, rng);
  fx.target("seg_features", in.seg);
  fx.target("rec_features", in.rec);
  ParamList<T> ps;
  block->collect(name, ps);
  add_params(fx, ps);
  fx.forward = [block, in, r1, r2] {
    const auto o = (*block)(in);
    return ops::add(project(o.seg, r1), project(o.rec, r2));
  };
  return fx;
}

template <typename T>
Fixture<T> csfe_fixture(std::uint64_t seed) {
  return dual_fixture<T, Csfe<T>>(seed, Shape{2, 4, 3, 3, 3}, "csfe");
}
template <typename T>
Fixture<T> ssfe_fixture(std::uint64_t seed) {
  return dual_fixture<T, Ssfe<T>>(seed, Shape{1, 2, 4, 4, 4}, "ssfe");
}
template <typename T>
Fixture<T> dusfe_fixture(std::uint64_t seed) {
  return dual_fixture<T, DusfeBlock<T>>(seed, Shape{1, 4, 4, 4, 4}, "dusfe");
}

constexpr std::array<std::size_t, 4> kToyChannels{4, 4, 8, 8};

template <typename T>
Fixture<T> decode_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  auto dec = std::make_shared<DualDecoder<T>>(kToyChannels, true, rng);
  const Tensor<T> bottleneck = randn<T>(Shape{1, kToyChannels[3] / 2, 1, 1, 1}, rng);
  const std::array<Tensor<T>, 3> skips{randn<T>(Shape{1, kToyChannels[0], 8, 8, 8}, rng),
                                       randn<T>(Shape{1, kToyChannels[1], 4, 4, 4}, rng),
                                       randn<T>(Shape{1, kToyChannels[2], 2, 2, 2}, rng)};
  const auto out = (*dec)(bottleneck, skips);
  const Tensor<T> r1 = fx.probe(out.seg, rng), r2 = fx.probe(out.recon, rng);
  fx.target("bottleneck", bottleneck);
  for (std::size_t i = 0; i < 3; ++i) fx.target("skip" + std::to_string(i), skips[i]);
  ParamList<T> ps;
  dec->collect("decoder", ps);
  // A seeded handful of parameter tensors keeps the suite fast.
  add_sampled(fx, ps, 6, seed);
  fx.forward = [dec, bottleneck, skips, r1, r2] {
    const auto o = (*dec)(bottleneck, skips);
    return ops::add(project(o.seg, r1), project(o.recon, r2));
  };
  return fx;
}

template <typename T>
Fixture<T> total_loss_fixture(std::uint64_t seed) {
  Rng rng(seed);
  Fixture<T> fx;
  ModelConfig cfg;
  cfg.channels = kToyChannels;
  cfg.extent = {8, 8, 8};
  cfg.seed = seed;
  auto model = std::make_shared<XhvedModel<T>>(cfg);
  const Tensor<T> images = randn<T>(Shape{1, 4, 8, 8, 8}, rng);
  Tensor<T> labels(Shape{1, 3, 8, 8, 8});
  for (auto& v : labels.data()) v = static_cast<T>(rng.uniform() < 0.3);
  const ModalitySubset subset = ModalitySubset::from_code(1 + seed % 15);
  const std::uint64_t noise_seed = derive_seed(seed, "noise");
  const Tensor<T> target = images.clone();
  fx.constants.push_back(labels);
  fx.constants.push_back(target);
  auto f = [model, images, labels, target, subset, noise_seed] {
    Rng noise(noise_seed);
    const auto out = model->forward(images, subset, LatentMode::sample, &noise);
    return total_loss(out.seg, out.recon, out.latents, labels, target, 0.1, 0.01).total;
  };
  fx.target("images", images);
  add_sampled(fx, model->parameters(), 6, seed);
  fx.forward = f;
  return fx;
}

struct Entry {
  const char* module;
  const char* block;
  Builder<float> f32;
  Builder<double> f64;
};

#define XHVED_ENTRY(module, block, fn) Entry{module, block, &fn<float>, &fn<double>}

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries{
      XHVED_ENTRY("tensor-core", "conv3d", conv_fixture),
      XHVED_ENTRY("tensor-core", "linear", linear_fixture),
      XHVED_ENTRY("tensor-core", "group_norm", group_norm_fixture),
      XHVED_ENTRY("tensor-core", "primitives", primitives_fixture),
      XHVED_ENTRY("save-encoder", "spatial_attention", spatial_attention_fixture),
      XHVED_ENTRY("save-encoder", "drb_reduce", drb_fixture),
      XHVED_ENTRY("save-encoder", "latent", latent_fixture),
      XHVED_ENTRY("vila", "mlstm_step", mlstm_fixture),
      XHVED_ENTRY("vila", "vil_block", vil_block_fixture),
      XHVED_ENTRY("vila", "vila_gate", vila_gate_fixture),
      XHVED_ENTRY("sfeca-decoders", "csfe", csfe_fixture),
      XHVED_ENTRY("sfeca-decoders", "ssfe", ssfe_fixture),
      XHVED_ENTRY("sfeca-decoders", "dusfe_block", dusfe_fixture),
      XHVED_ENTRY("sfeca-decoders", "decode", decode_fixture),
      XHVED_ENTRY("training", "total_loss", total_loss_fixture),
  };
  return entries;
}

// The 64-bit twin must evaluate the very function the 32-bit side
// differentiates, so its inputs are rounded to float precision.
void round_to_float(Fixture<double>& fx) {
  auto round = [](Tensor<double>& t) {
    for (auto& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  };
  for (auto& t : fx.targets) round(t);
  for (auto& t : fx.constants) round(t);
}

void fold(SuiteResult& res, const std::vector<FdReport>& reports, std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : reports) {
    ok = ok && r.pass;
    res.coordinates += r.checked;
    res.straddled += r.straddled;
    res.noise_limited += r.noise_limited;
    if (r.max_rel_err >= res.worst_rel) {
      res.worst_rel = r.max_rel_err;
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s seed=%llu idx=%zu analytic=%.9g numeric=%.9g", r.name.c_str(),
                    static_cast<unsigned long long>(seed), r.worst_index, r.worst_analytic,
                    r.worst_numeric);
      res.worst = buf;
    }
  }
  ++res.seeds;
  res.passed += ok;
}

}  // namespace

std::vector<BlockInfo> gradcheck_blocks() {
  std::vector<BlockInfo> out;
  for (const auto& e : registry()) out.push_back({e.module, e.block});
  return out;
}

std::vector<SuiteResult> run_gradcheck(const std::string& filter, const GradcheckOptions& opts,
                                       std::ostream* progress) {
  std::vector<SuiteResult> results;
  for (const auto& e : registry()) {
    if (!filter.empty() && filter != e.module && filter != e.block) continue;
    SuiteResult r32, r64;
    r32.module = r64.module = e.module;
    r32.block = r64.block = e.block;
    r64.bits = 64;
    for (std::size_t s = 0; s < opts.seeds; ++s) {
      const std::uint64_t seed = derive_seed(opts.base_seed, s);
      Fixture<float> f = e.f32(seed);
      Fixture<double> d = e.f64(seed);
      round_to_float(d);
      const FdOptions o{.step = opts.step, .order = opts.order, .max_coords = opts.max_coords, .seed = seed};
      const auto reps = check_gradients_multi<double, float, double>(
          d.forward, d.targets, d.names, o, {opts.tol32, opts.tol64}, {f.forward, f.targets},
          {d.forward, d.targets});
      fold(r32, reps[0], seed);
      fold(r64, reps[1], seed);
    }
    for (auto* r : {&r32, &r64}) {
      if (progress) *progress << format_suite(*r) << std::endl;
      results.push_back(std::move(*r));
    }
  }
  require(!results.empty(), "gradcheck: no module or block named '" + filter + "'");
  return results;
}

std::string format_suite(const SuiteResult& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%-5s %-15s %-18s %2d-bit seeds %zu/%zu coords %zu straddled %zu noise-limited %zu max_rel %.3e%s%s",
                r.pass() ? "PASS" : "FAIL", r.module.c_str(), r.block.c_str(), r.bits, r.passed, r.seeds,
                r.coordinates, r.straddled, r.noise_limited, r.worst_rel, r.pass() ? "" : "  worst: ",
                r.pass() ? "" : r.worst.c_str());
  return buf;
}

}  // namespace xhved
