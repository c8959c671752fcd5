#include "xhved/optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace xhved {

template <typename T>
Adam<T>::Adam(ParamList<T> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  require(options.learning_rate > 0, "adam: learning rate must be positive");
  require(options.beta1 >= 0 && options.beta1 < 1 && options.beta2 >= 0 && options.beta2 < 1,
          "adam: betas must lie in [0,1)");
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.shape());
    v_.emplace_back(p.tensor.shape());
  }
}

template <typename T>
double Adam<T>::step() {
  double sq = 0.0;
  for (const auto& p : params_)
    for (T g : p.tensor.grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("adam: non-finite gradient norm");
  const double clip = (options_.clip_norm > 0 && norm > options_.clip_norm)
                          ? options_.clip_norm / norm
                          : 1.0;
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].tensor;
    const auto g = p.grad();
    if (g.empty()) continue;
    auto w = p.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]) * clip;
      const double mk = b1 * m[k] + (1.0 - b1) * gk;
      const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double update = options_.learning_rate * (mk / c1) / (std::sqrt(vk / c2) + options_.eps);
      w[k] = static_cast<T>(w[k] - update);
    }
  }
  return norm;
}

template <typename T>
void Adam<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
ParamList<T> Adam<T>::state() const {
  ParamList<T> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.push_back({params_[i].name + ".m", m_[i]});
    out.push_back({params_[i].name + ".v", v_[i]});
  }
  return out;
}

template <typename T>
void Adam<T>::load_state(std::uint64_t steps, const ParamList<T>& moments) {
  auto dst = state();
  copy_parameters(moments, dst);
  t_ = steps;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace xhved
