#include "xhved/losses.hpp"

namespace xhved {

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require(pred.defined() && target.defined() && pred.shape() == target.shape() && pred.rank() >= 2,
          "dice_loss: prediction and target shapes differ");
  const std::size_t b = pred.dim(0), r = pred.dim(1), n = pred.numel() / (b * r);
  // Regions become the leading axis so each can be summed separately.
  auto regions = [&](const Tensor<T>& x) {
    return ops::transpose_last2(ops::reshape(x, Shape{b, r, n}));
  };
  const Tensor<T> p = regions(pred), t = regions(target);  // [B,N,R]
  std::vector<Tensor<T>> terms;
  for (std::size_t i = 0; i < r; ++i) {
    const Tensor<T> pi = ops::narrow(p, 2, i, 1), ti = ops::narrow(t, 2, i, 1);
    const Tensor<T> inter = ops::sum(ops::mul(pi, ti));
    const Tensor<T> denom = ops::add_scalar(ops::add(ops::sum(pi), ops::sum(ti)), kDiceEps);
    const Tensor<T> ratio = ops::div(ops::add_scalar(ops::scale(inter, 2.0), kDiceEps), denom);
    terms.push_back(ops::add_scalar(ops::scale(ratio, -1.0), 1.0));
  }
  return ops::scale(ops::add_n(terms), 1.0 / static_cast<double>(r));
}

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  require(pred.defined() && target.defined() && pred.shape() == target.shape(),
          "mse: shapes differ");
  return ops::mean(ops::square(ops::sub(pred, target.detach())));
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& seg, const Tensor<T>& recon,
                        const std::array<LatentGaussian<T>, 4>& latents, const Tensor<T>& labels,
                        const Tensor<T>& images, double lambda_rec, double lambda_kl,
                        double seg_weight) {
  require(lambda_rec >= 0 && lambda_kl >= 0 && seg_weight >= 0, "total_loss: negative weight");
  LossTerms<T> out;
  out.dice = dice_loss(seg, labels.detach());
  out.rec = mse(recon, images);
  std::vector<Tensor<T>> kls;
  for (const auto& g : latents) kls.push_back(kl_standard_normal(g));
  out.kl = ops::add_n(kls);
  std::vector<Tensor<T>> parts;
  if (seg_weight > 0) parts.push_back(seg_weight == 1.0 ? out.dice : ops::scale(out.dice, seg_weight));
  if (lambda_rec > 0) parts.push_back(ops::scale(out.rec, lambda_rec));
  if (lambda_kl > 0) parts.push_back(ops::scale(out.kl, lambda_kl));
  out.total = parts.empty() ? ops::scale(out.dice, 0.0) : ops::add_n(parts);
  return out;
}

#define XHVED_INSTANTIATE(T)                                                                  \
  template Tensor<T> dice_loss<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template LossTerms<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&,                     \
                                      const std::array<LatentGaussian<T>, 4>&,                \
                                      const Tensor<T>&, const Tensor<T>&, double, double, double);

XHVED_INSTANTIATE(float)
XHVED_INSTANTIATE(double)

}  // namespace xhved
