#include "xhved/save_encoder.hpp"

#include <algorithm>

namespace xhved {

template <typename T>
LatentGaussian<T> pog_fuse(const std::vector<LatentGaussian<T>>& experts, bool include_prior) {
  require(!experts.empty(), "pog_fuse: no experts to fuse");
  const Shape& shape = experts.front().mu.shape();
  for (const auto& e : experts) {
    require(e.mu.shape() == shape && e.logvar.shape() == shape,
            "pog_fuse: experts differ in shape");
    require(e.level == experts.front().level, "pog_fuse: experts come from different levels");
  }
  std::vector<const LatentGaussian<T>*> order;
  for (const auto& e : experts) order.push_back(&e);
  std::stable_sort(order.begin(), order.end(),
                   [](const auto* a, const auto* b) { return a->source < b->source; });

  std::vector<Tensor<T>> precisions, weighted;
  for (const auto* e : order) {
    Tensor<T> p = ops::exp(ops::scale(e->logvar, -1.0));
    weighted.push_back(ops::mul(p, e->mu));
    precisions.push_back(std::move(p));
  }
  Tensor<T> lambda = ops::add_n(precisions);
  if (include_prior) lambda = ops::add_scalar(lambda, 1.0);
  Tensor<T> num = ops::add_n(weighted);
  return {ops::div(num, lambda), ops::scale(ops::log(lambda), -1.0), experts.front().level, -1};
}

template <typename T>
Tensor<T> reparameterize(const LatentGaussian<T>& g, const Tensor<T>& eps, LatentMode mode) {
  if (mode == LatentMode::mean) return g.mu;
  require(eps.defined() && eps.shape() == g.mu.shape(), "reparameterize: eps shape mismatch");
  detail::check_finite<T>(eps.data(), "reparameterize");
  const Tensor<T> noise = eps.detach();
  return ops::add(g.mu, ops::mul(ops::exp(ops::scale(g.logvar, 0.5)), noise));
}

template <typename T>
Tensor<T> kl_standard_normal(const LatentGaussian<T>& g) {
  require(g.mu.defined() && g.mu.shape() == g.logvar.shape() && g.mu.rank() >= 1,
          "kl_standard_normal: mu/logvar shape mismatch");
  const double batch = static_cast<double>(g.mu.dim(0));
  Tensor<T> terms = ops::sub(ops::add(ops::square(g.mu), ops::exp(g.logvar)),
                             ops::add_scalar(g.logvar, 1.0));
  return ops::scale(ops::sum(terms), 0.5 / batch);
}

template <typename T>
Tensor<T> channel_slice(const Tensor<T>& x, std::size_t c) {
  return ops::narrow(x, 1, c, 1);
}

template <typename T>
Tensor<T> SpatialAttention<T>::gate(const Tensor<T>& f) const {
  const Tensor<T> pooled = ops::concat<T>({ops::channel_mean(f), ops::channel_max(f)}, 1);
  return ops::sigmoid(conv_(pooled));
}

template <typename T>
Tensor<T> SpatialAttention<T>::operator()(const Tensor<T>& f) const {
  return ops::mul_spatial(f, gate(f));
}

template <typename T>
DimensionReduction<T>::DimensionReduction(std::size_t channels, Rng& rng)
    : channels_(channels), conv_(channels, channels / 2, 1, 1, rng), norm_(channels / 2) {
  require(channels >= 2 && channels % 2 == 0, "drb_reduce: channel count must be even");
}

template <typename T>
Tensor<T> DimensionReduction<T>::operator()(const Tensor<T>& f) const {
  require(f.rank() == 5 && f.dim(1) == channels_,
          "drb_reduce: expected " + std::to_string(channels_) + " channels, got " + shape_str(f.shape()));
  return ops::leaky_relu(norm_(conv_(f)), kLeakySlope);
}

template <typename T>
void DimensionReduction<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  conv_.collect(prefix + ".conv", out);
  norm_.collect(prefix + ".norm", out);
}

template <typename T>
ModalityEncoder<T>::ModalityEncoder(std::array<std::size_t, 4> channels, bool attention, Rng& rng)
    : channels_(channels), attention_(attention) {
  std::size_t in = 1;
  for (std::size_t l = 0; l < 4; ++l) {
    convs_[2 * l] = ConvNormAct<T>(in, channels[l], 3, l == 0 ? 1 : 2, rng);
    convs_[2 * l + 1] = ConvNormAct<T>(channels[l], channels[l], 3, 1, rng);
    attn_[l] = SpatialAttention<T>(rng);
    mu_head_[l] = Conv3dLayer<T>(channels[l], channels[l], 1, 1, rng);
    logvar_head_[l] = Conv3dLayer<T>(channels[l], channels[l], 1, 1, rng);
    // Start close to unit variance so early samples are not swamped by noise.
    for (auto& w : logvar_head_[l].weight.data()) w = static_cast<T>(0.1 * w);
    in = channels[l];
  }
}

template <typename T>
EncoderOutput<T> ModalityEncoder<T>::operator()(const Tensor<T>& image, int source) const {
  require(image.rank() == 5 && image.dim(1) == 1, "encode_modality: image must be [B,1,D,H,W]");
  for (std::size_t a = 2; a < 5; ++a)
    require(image.dim(a) % 8 == 0, "encode_modality: extent " + shape_str(image.shape()) +
                                       " is not divisible by 8");
  EncoderOutput<T> out;
  Tensor<T> f = image;
  for (std::size_t l = 0; l < 4; ++l) {
    f = convs_[2 * l + 1](convs_[2 * l](f));
    if (attention_) f = attn_[l](f);
    out.features[l] = f;
    out.gaussians[l] = {mu_head_[l](f), ops::clamp(logvar_head_[l](f), -kLogvarClamp, kLogvarClamp),
                        l, source};
  }
  return out;
}

template <typename T>
void ModalityEncoder<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (std::size_t l = 0; l < 4; ++l) {
    const std::string p = prefix + ".level" + std::to_string(l);
    convs_[2 * l].collect(p + ".conv0", out);
    convs_[2 * l + 1].collect(p + ".conv1", out);
    if (attention_) attn_[l].collect(p + ".attention", out);
    mu_head_[l].collect(p + ".mu", out);
    logvar_head_[l].collect(p + ".logvar", out);
  }
}

template <typename T>
void ModalityEncoder<T>::zero_heads() {
  for (std::size_t l = 0; l < 4; ++l) {
    mu_head_[l].zero();
    logvar_head_[l].zero();
  }
}

template <typename T>
SaveEncoder<T>::SaveEncoder(std::array<std::size_t, 4> channels, bool attention,
                            bool include_prior, Rng& rng)
    : include_prior_(include_prior) {
  for (auto& e : encoders_) e = ModalityEncoder<T>(channels, attention, rng);
  drb_ = DimensionReduction<T>(channels[3], rng);
}

template <typename T>
EncodeResult<T> SaveEncoder<T>::operator()(const Tensor<T>& images, ModalitySubset subset,
                                           LatentMode mode, Rng* noise) const {
  require(!subset.empty(), "encode_subset: empty modality subset");
  require(images.rank() == 5 && images.dim(1) == 4, "encode_subset: images must be [B,4,D,H,W]");
  require(mode == LatentMode::mean || noise != nullptr, "encode_subset: sampling needs a noise stream");
  std::array<std::vector<LatentGaussian<T>>, 4> experts;
  for (Modality m : subset.modalities()) {
    const auto idx = static_cast<std::size_t>(m);
    auto enc = encoders_[idx](channel_slice(images, idx), static_cast<int>(idx));
    for (std::size_t l = 0; l < 4; ++l) experts[l].push_back(std::move(enc.gaussians[l]));
  }
  EncodeResult<T> res;
  std::array<Tensor<T>, 4> z;
  for (std::size_t l = 0; l < 4; ++l) {
    res.fused[l] = pog_fuse(experts[l], include_prior_);
    Tensor<T> eps;
    if (mode == LatentMode::sample) eps = randn<T>(res.fused[l].mu.shape(), *noise);
    z[l] = reparameterize(res.fused[l], eps, mode);
  }
  res.skips = {z[0], z[1], z[2]};
  res.bottleneck = drb_(z[3]);
  return res;
}

template <typename T>
void SaveEncoder<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  for (Modality m : kAllModalities)
    encoders_[static_cast<std::size_t>(m)].collect(
        prefix + "." + std::string(modality_name(m)), out);
  drb_.collect(prefix + ".drb", out);
}

#define XHVED_INSTANTIATE(T)                                                                   \
  template LatentGaussian<T> pog_fuse<T>(const std::vector<LatentGaussian<T>>&, bool);         \
  template Tensor<T> reparameterize<T>(const LatentGaussian<T>&, const Tensor<T>&, LatentMode); \
  template Tensor<T> kl_standard_normal<T>(const LatentGaussian<T>&);                          \
  template Tensor<T> channel_slice<T>(const Tensor<T>&, std::size_t);                          \
  template class SpatialAttention<T>;                                                          \
  template class DimensionReduction<T>;                                                        \
  template class ModalityEncoder<T>;                                                           \
  template class SaveEncoder<T>;

XHVED_INSTANTIATE(float)
XHVED_INSTANTIATE(double)

}  // namespace xhved
