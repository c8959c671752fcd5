#include "xhved/sfeca.hpp"

namespace xhved {

namespace {

template <typename T>
void require_pair(const DualFeatures<T>& f, const char* op) {
  require(f.seg.defined() && f.rec.defined() && f.seg.rank() == 5 && f.seg.shape() == f.rec.shape(),
          std::string(op) + ": branches must share a [B,C,D,H,W] shape");
}

}  // namespace

template <typename T>
Csfe<T>::Csfe(std::size_t channels, Rng& rng)
    : squeeze(2 * channels, channels / 2, rng),
      seg_head(channels / 2, channels, rng),
      rec_head(channels / 2, channels, rng) {
  require(channels >= 2 && channels % 2 == 0, "csfe: channel count must be even");
}

template <typename T>
DualFeatures<T> Csfe<T>::gates(const DualFeatures<T>& f) const {
  require_pair(f, "csfe");
  const Tensor<T> v = ops::concat<T>({ops::global_avg_pool(f.seg), ops::global_avg_pool(f.rec)}, 1);
  const Tensor<T> fused = ops::leaky_relu(squeeze(v), kLeakySlope);
  return {ops::sigmoid(seg_head(fused)), ops::sigmoid(rec_head(fused))};
}

template <typename T>
DualFeatures<T> Csfe<T>::operator()(const DualFeatures<T>& f) const {
  const auto g = gates(f);
  return {ops::mul_channel(f.seg, g.seg), ops::mul_channel(f.rec, g.rec)};
}

template <typename T>
void Csfe<T>::zero() {
  squeeze.zero();
  seg_head.zero();
  rec_head.zero();
}

template <typename T>
void Csfe<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  squeeze.collect(prefix + ".squeeze", out);
  seg_head.collect(prefix + ".seg_head", out);
  rec_head.collect(prefix + ".rec_head", out);
}

template <typename T>
Ssfe<T>::Ssfe(std::size_t channels, Rng& rng)
    : seg_reduce(channels, 1, 3, 1, rng),
      rec_reduce(channels, 1, 3, 1, rng),
      fuse(2, 1, 3, 1, rng),
      seg_gate(1, 1, 1, 1, rng),
      rec_gate(1, 1, 1, 1, rng) {}

template <typename T>
DualFeatures<T> Ssfe<T>::gates(const DualFeatures<T>& f) const {
  require_pair(f, "ssfe");
  const Tensor<T> m = fuse(ops::concat<T>({seg_reduce(f.seg), rec_reduce(f.rec)}, 1));
  return {ops::sigmoid(seg_gate(m)), ops::sigmoid(rec_gate(m))};
}

template <typename T>
DualFeatures<T> Ssfe<T>::operator()(const DualFeatures<T>& f) const {
  const auto g = gates(f);
  return {ops::mul_spatial(f.seg, g.seg), ops::mul_spatial(f.rec, g.rec)};
}

template <typename T>
void Ssfe<T>::zero() {
  for (auto* c : {&seg_reduce, &rec_reduce, &fuse, &seg_gate, &rec_gate}) c->zero();
}

template <typename T>
void Ssfe<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  seg_reduce.collect(prefix + ".seg_reduce", out);
  rec_reduce.collect(prefix + ".rec_reduce", out);
  fuse.collect(prefix + ".fuse", out);
  seg_gate.collect(prefix + ".seg_gate", out);
  rec_gate.collect(prefix + ".rec_gate", out);
}

template <typename T>
DualFeatures<T> DusfeBlock<T>::operator()(const DualFeatures<T>& f) const {
  const auto r = ssfe(csfe(f));
  return {ops::add(r.seg, f.seg), ops::add(r.rec, f.rec)};
}

template <typename T>
void DusfeBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  csfe.collect(prefix + ".csfe", out);
  ssfe.collect(prefix + ".ssfe", out);
}

template <typename T>
DecoderStage<T>::DecoderStage(std::size_t in_channels, std::size_t skip_channels,
                              std::size_t out_channels, Rng& rng)
    : first_(in_channels + skip_channels, out_channels, 3, 1, rng),
      second_(out_channels, out_channels, 3, 1, rng) {}

template <typename T>
Tensor<T> DecoderStage<T>::operator()(const Tensor<T>& x, const Tensor<T>& skip) const {
  const Tensor<T> up = ops::resample(x, ops::Resample::up2);
  require(up.dim(0) == skip.dim(0) && up.dim(2) == skip.dim(2) && up.dim(3) == skip.dim(3) &&
              up.dim(4) == skip.dim(4),
          "decode: skip " + shape_str(skip.shape()) + " does not match upsampled " +
              shape_str(up.shape()));
  return second_(first_(ops::concat<T>({up, skip}, 1)));
}

template <typename T>
void DecoderStage<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  first_.collect(prefix + ".conv0", out);
  second_.collect(prefix + ".conv1", out);
}

template <typename T>
DualDecoder<T>::DualDecoder(std::array<std::size_t, 4> c, bool sfeca, Rng& rng) : sfeca_(sfeca) {
  const std::size_t in0 = c[3] / 2;
  const std::array<std::size_t, 3> in{in0, c[2], c[1]};
  const std::array<std::size_t, 3> out{c[2], c[1], c[0]};
  for (std::size_t i = 0; i < 3; ++i) seg_stages[i] = DecoderStage<T>(in[i], out[i], out[i], rng);
  for (std::size_t i = 0; i < 3; ++i) rec_stages[i] = DecoderStage<T>(in[i], out[i], out[i], rng);
  exchange[0] = DusfeBlock<T>(c[1], rng);
  exchange[1] = DusfeBlock<T>(c[0], rng);
  seg_head = Conv3dLayer<T>(c[0], 3, 1, 1, rng);
  rec_head = Conv3dLayer<T>(c[0], 4, 1, 1, rng);
}

template <typename T>
DecodeOutput<T> DualDecoder<T>::operator()(const Tensor<T>& bottleneck,
                                           const std::array<Tensor<T>, 3>& skips) const {
  require(bottleneck.defined() && bottleneck.rank() == 5, "decode: bottleneck must be [B,C,D,H,W]");
  DualFeatures<T> f{bottleneck, bottleneck};
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor<T>& skip = skips[2 - i];
    f = {seg_stages[i](f.seg, skip), rec_stages[i](f.rec, skip)};
    if (sfeca_ && i >= 1) f = exchange[i - 1](f);
  }
  return {ops::sigmoid(seg_head(f.seg)), rec_head(f.rec)};
}

template <typename T>
void DualDecoder<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t i = 0; i < 3; ++i)
    seg_stages[i].collect(prefix + ".seg.stage" + std::to_string(i + 1), out);
  seg_head.collect(prefix + ".seg.head", out);
  for (std::size_t i = 0; i < 3; ++i)
    rec_stages[i].collect(prefix + ".rec.stage" + std::to_string(i + 1), out);
  rec_head.collect(prefix + ".rec.head", out);
  if (sfeca_) {
    exchange[0].collect(prefix + ".dusfe16", out);
    exchange[1].collect(prefix + ".dusfe8", out);
  }
}

#define XHVED_INSTANTIATE(T)       \
  template class Csfe<T>;          \
  template class Ssfe<T>;          \
  template class DusfeBlock<T>;    \
  template class DecoderStage<T>;  \
  template class DualDecoder<T>;

XHVED_INSTANTIATE(float)
XHVED_INSTANTIATE(double)

}  // namespace xhved
