#include "xhved/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

namespace xhved::ops {

namespace {

template <typename T>
using Impl = TensorImpl<T>;

template <typename T>
Impl<T>& input(const Impl<T>& out, std::size_t i) {
  return *out.grad_fn->inputs[i];
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.defined() && b.defined(), std::string(op) + ": undefined operand");
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

// Splits `shape` around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};
AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T, typename F, typename G>
Tensor<T> unary(const char* op, const Tensor<T>& a, F forward, G local_grad) {
  require(a.defined(), std::string(op) + ": undefined operand");
  std::vector<T> out(a.numel());
  const auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(x[i]);
  return detail::make_result<T>(op, a.shape(), std::move(out), {&a},
                                [local_grad](const Impl<T>& o) {
                                  auto& in = input(o, 0);
                                  if (!in.requires_grad) return;
                                  T* g = in.grad_buffer();
                                  for (std::size_t i = 0; i < o.data.size(); ++i)
                                    g[i] += o.grad[i] * local_grad(in.data[i], o.data[i]);
                                });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return detail::make_result<T>("add", a.shape(), std::move(out), {&a, &b}, [](const Impl<T>& o) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto& in = input(o, k);
      if (!in.requires_grad) continue;
      T* g = in.grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return detail::make_result<T>("sub", a.shape(), std::move(out), {&a, &b}, [](const Impl<T>& o) {
    auto& x = input(o, 0);
    if (x.requires_grad) {
      T* g = x.grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    auto& y = input(o, 1);
    if (y.requires_grad) {
      T* g = y.grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return detail::make_result<T>("mul", a.shape(), std::move(out), {&a, &b}, [](const Impl<T>& o) {
    auto& x = input(o, 0);
    auto& y = input(o, 1);
    if (x.requires_grad) {
      T* g = x.grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * y.data[i];
    }
    if (y.requires_grad) {
      T* g = y.grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * x.data[i];
    }
  });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "div");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] / b.data()[i];
  return detail::make_result<T>("div", a.shape(), std::move(out), {&a, &b}, [](const Impl<T>& o) {
    auto& x = input(o, 0);
    auto& y = input(o, 1);
    if (x.requires_grad) {
      T* g = x.grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] / y.data[i];
    }
    if (y.requires_grad) {
      T* g = y.grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i] * o.data[i] / y.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
  const T f = static_cast<T>(s);
  return unary<T>("scale", a, [f](T x) { return f * x; }, [f](T, T) { return f; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double s) {
  const T c = static_cast<T>(s);
  return unary<T>("add_scalar", a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  require(a.defined(), "sum: undefined operand");
  double acc = 0.0;
  for (T v : a.data()) acc += static_cast<double>(v);
  return detail::make_result<T>("sum", Shape{}, {static_cast<T>(acc)}, {&a}, [](const Impl<T>& o) {
    auto& in = input(o, 0);
    if (!in.requires_grad) return;
    T* g = in.grad_buffer();
    for (std::size_t i = 0; i < in.data.size(); ++i) g[i] += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require(a.defined() && a.numel() > 0, "mean: empty operand");
  double acc = 0.0;
  for (T v : a.data()) acc += static_cast<double>(v);
  const double n = static_cast<double>(a.numel());
  return detail::make_result<T>("mean", Shape{}, {static_cast<T>(acc / n)}, {&a},
                                [](const Impl<T>& o) {
                                  auto& in = input(o, 0);
                                  if (!in.requires_grad) return;
                                  T* g = in.grad_buffer();
                                  const T share = o.grad[0] / static_cast<T>(in.data.size());
                                  for (std::size_t i = 0; i < in.data.size(); ++i) g[i] += share;
                                });
}

template <typename T>
Tensor<T> add_n(const std::vector<Tensor<T>>& terms) {
  require(!terms.empty(), "add_n: no terms");
  for (const auto& t : terms) require_same_shape(terms[0], t, "add_n");
  std::vector<T> out(terms[0].numel(), T(0));
  for (const auto& t : terms) {
    const auto d = t.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += d[i];
  }
  std::vector<const Tensor<T>*> ins;
  for (const auto& t : terms) ins.push_back(&t);
  return detail::make_result<T>("add_n", terms[0].shape(), std::move(out), ins,
                                [](const Impl<T>& o) {
                                  for (const auto& in : o.grad_fn->inputs) {
                                    if (!in->requires_grad) continue;
                                    T* g = in->grad_buffer();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i)
                                      g[i] += o.grad[i];
                                  }
                                });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary<T>("sigmoid", a, [](T x) { return stable_sigmoid(x); },
                  [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return unary<T>("square", a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, double alpha) {
  if (BranchTrace::active())
    for (T x : a.data()) BranchTrace::record(x >= T(0));
  const T s = static_cast<T>(alpha);
  return unary<T>("leaky_relu", a, [s](T x) { return x >= T(0) ? x : s * x; },
                  [s](T x, T) { return x >= T(0) ? T(1) : s; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  const T l = static_cast<T>(lo), h = static_cast<T>(hi);
  if (BranchTrace::active())
    for (T x : a.data()) BranchTrace::record((x >= l) + 2 * (x <= h));
  return unary<T>("clamp", a, [l, h](T x) { return std::clamp(x, l, h); },
                  [l, h](T x, T) { return (x >= l && x <= h) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> activation(const Tensor<T>& a, Activation kind, double alpha) {
  switch (kind) {
    case Activation::sigmoid: return sigmoid(a);
    case Activation::exp: return exp(a);
    case Activation::leaky_relu: return leaky_relu(a, alpha);
  }
  contract_fail("activation: unknown kind");
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  require(a.defined() && axis < a.rank(), "softmax: axis out of range");
  const auto s = split_at(a.shape(), axis);
  const auto x = a.data();
  std::vector<T> out(a.numel());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      T peak = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < s.len; ++k) peak = std::max(peak, x[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.len; ++k) {
        const T e = std::exp(x[base + k * s.inner] - peak);
        out[base + k * s.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < s.len; ++k)
        out[base + k * s.inner] = static_cast<T>(out[base + k * s.inner] / z);
    }
  }
  return detail::make_result<T>("softmax", a.shape(), std::move(out), {&a},
                                [s](const Impl<T>& o) {
                                  auto& in = input(o, 0);
                                  if (!in.requires_grad) return;
                                  T* g = in.grad_buffer();
                                  for (std::size_t ou = 0; ou < s.outer; ++ou) {
                                    for (std::size_t inn = 0; inn < s.inner; ++inn) {
                                      const std::size_t base = ou * s.len * s.inner + inn;
                                      double dot = 0.0;
                                      for (std::size_t k = 0; k < s.len; ++k) {
                                        const std::size_t i = base + k * s.inner;
                                        dot += o.grad[i] * o.data[i];
                                      }
                                      for (std::size_t k = 0; k < s.len; ++k) {
                                        const std::size_t i = base + k * s.inner;
                                        g[i] += o.data[i] * static_cast<T>(o.grad[i] - dot);
                                      }
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(x.defined() && weight.defined() && weight.rank() == 2, "linear: weight must be [M,N]");
  require(x.rank() >= 1 && x.shape().back() == weight.dim(1),
          "linear: trailing axis " + shape_str(x.shape()) + " does not match weight " +
              shape_str(weight.shape()));
  const std::size_t n = weight.dim(1), m = weight.dim(0), rows = x.numel() / n;
  if (bias.defined()) require(bias.shape() == Shape{m}, "linear: bias must be [M]");
  Shape out_shape = x.shape();
  out_shape.back() = m;
  std::vector<T> out(rows * m);
  // Row-at-a-time dot products: a row's result never depends on how many
  // other rows share the call.
  const T* xp = x.data().data();
  const T* wp = weight.data().data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = bias.defined() ? static_cast<double>(bias.data()[j]) : 0.0;
      for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(xp[r * n + i]) * wp[j * n + i];
      out[r * m + j] = static_cast<T>(acc);
    }
  std::vector<const Tensor<T>*> ins{&x, &weight};
  if (bias.defined()) ins.push_back(&bias);
  return detail::make_result<T>(
      "linear", std::move(out_shape), std::move(out), ins, [rows, n, m](const Impl<T>& o) {
        auto& xi = input(o, 0);
        auto& wi = input(o, 1);
        CMapMat<T> gy(o.grad.data(), rows, m);
        if (xi.requires_grad) {
          MapMat<T>(xi.grad_buffer(), rows, n).noalias() += gy * CMapMat<T>(wi.data.data(), m, n);
        }
        if (wi.requires_grad) {
          MapMat<T>(wi.grad_buffer(), m, n).noalias() +=
              gy.transpose() * CMapMat<T>(xi.data.data(), rows, n);
        }
        if (o.grad_fn->inputs.size() > 2) {
          auto& bi = input(o, 2);
          if (bi.requires_grad) {
            T* g = bi.grad_buffer();
            for (std::size_t j = 0; j < m; ++j) {
              double acc = 0.0;
              for (std::size_t r = 0; r < rows; ++r) acc += o.grad[r * m + j];
              g[j] += static_cast<T>(acc);
            }
          }
        }
      });
}

namespace {

// Normalizes `blocks` contiguous runs of `len` values. Affine parameters are
// looked up per element through `affine_index(block, offset_in_block)`.
template <typename T, typename Index>
Tensor<T> normalize_blocks(const char* op, const Tensor<T>& x, const Tensor<T>& gamma,
                           const Tensor<T>& beta, std::size_t blocks, std::size_t len,
                           double eps, Index affine_index) {
  const auto xd = x.data();
  const auto gd = gamma.data();
  const auto bd = beta.data();
  std::vector<T> out(x.numel());
  std::vector<double> mean(blocks), rstd(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    const T* p = xd.data() + b * len;
    double mu = 0.0;
    for (std::size_t i = 0; i < len; ++i) mu += p[i];
    mu /= static_cast<double>(len);
    double var = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double d = p[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(len);
    mean[b] = mu;
    rstd[b] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t c = affine_index(b, i);
      const double xhat = (p[i] - mu) * rstd[b];
      out[b * len + i] = static_cast<T>(xhat * gd[c] + bd[c]);
    }
  }
  return detail::make_result<T>(
      op, x.shape(), std::move(out), {&x, &gamma, &beta},
      [blocks, len, affine_index, mean = std::move(mean), rstd = std::move(rstd)](const Impl<T>& o) {
        auto& xi = input(o, 0);
        auto& gi = input(o, 1);
        auto& bi = input(o, 2);
        std::vector<double> dgamma(gi.data.size(), 0.0), dbeta(bi.data.size(), 0.0);
        T* gx = xi.requires_grad ? xi.grad_buffer() : nullptr;
        for (std::size_t b = 0; b < blocks; ++b) {
          const T* p = xi.data.data() + b * len;
          const T* gy = o.grad.data() + b * len;
          double sum_gxhat = 0.0, sum_gxhat_xhat = 0.0;
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t c = affine_index(b, i);
            const double xhat = (p[i] - mean[b]) * rstd[b];
            const double gxhat = static_cast<double>(gy[i]) * gi.data[c];
            sum_gxhat += gxhat;
            sum_gxhat_xhat += gxhat * xhat;
            dgamma[c] += gy[i] * xhat;
            dbeta[c] += gy[i];
          }
          if (!gx) continue;
          const double mg = sum_gxhat / static_cast<double>(len);
          const double mgx = sum_gxhat_xhat / static_cast<double>(len);
          for (std::size_t i = 0; i < len; ++i) {
            const std::size_t c = affine_index(b, i);
            const double xhat = (p[i] - mean[b]) * rstd[b];
            const double gxhat = static_cast<double>(gy[i]) * gi.data[c];
            gx[b * len + i] += static_cast<T>(rstd[b] * (gxhat - mg - xhat * mgx));
          }
        }
        if (gi.requires_grad) {
          T* g = gi.grad_buffer();
          for (std::size_t c = 0; c < dgamma.size(); ++c) g[c] += static_cast<T>(dgamma[c]);
        }
        if (bi.requires_grad) {
          T* g = bi.grad_buffer();
          for (std::size_t c = 0; c < dbeta.size(); ++c) g[c] += static_cast<T>(dbeta[c]);
        }
      });
}

}  // namespace

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::size_t groups, const Tensor<T>& gamma,
                     const Tensor<T>& beta, double eps) {
  require(x.defined() && x.rank() >= 2, "group_norm: input must be [B,C,...]");
  const std::size_t b = x.dim(0), c = x.dim(1);
  require(groups > 0 && c % groups == 0,
          "group_norm: channels " + std::to_string(c) + " not divisible by groups " +
              std::to_string(groups));
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
          "group_norm: gamma/beta must be [C]");
  const std::size_t spatial = x.numel() / (b * c);
  const std::size_t per_group = c / groups;
  return normalize_blocks<T>("group_norm", x, gamma, beta, b * groups, per_group * spatial, eps,
                             [groups, per_group, spatial](std::size_t block, std::size_t i) {
                               return (block % groups) * per_group + i / spatial;
                             });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  require(x.defined() && x.rank() >= 1, "layer_norm: undefined input");
  const std::size_t n = x.shape().back();
  require(gamma.shape() == Shape{n} && beta.shape() == Shape{n},
          "layer_norm: gamma/beta must match the trailing axis");
  return normalize_blocks<T>("layer_norm", x, gamma, beta, x.numel() / n, n, eps,
                             [](std::size_t, std::size_t i) { return i; });
}

template <typename T>
Tensor<T> resample(const Tensor<T>& x, Resample mode) {
  require(x.defined() && x.rank() == 5, "resample: input must be [B,C,D,H,W]");
  const std::size_t bc = x.dim(0) * x.dim(1);
  const std::size_t d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const auto xd = x.data();
  if (mode == Resample::down2) {
    require(d % 2 == 0 && h % 2 == 0 && w % 2 == 0,
            "resample(down2): odd spatial extent " + shape_str(x.shape()));
    const std::size_t od = d / 2, oh = h / 2, ow = w / 2;
    std::vector<T> out(bc * od * oh * ow);
    for (std::size_t n = 0; n < bc; ++n)
      for (std::size_t z = 0; z < od; ++z)
        for (std::size_t y = 0; y < oh; ++y)
          for (std::size_t q = 0; q < ow; ++q) {
            double acc = 0.0;
            for (std::size_t dz = 0; dz < 2; ++dz)
              for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx)
                  acc += xd[((n * d + 2 * z + dz) * h + 2 * y + dy) * w + 2 * q + dx];
            out[((n * od + z) * oh + y) * ow + q] = static_cast<T>(acc / 8.0);
          }
    return detail::make_result<T>(
        "resample_down2", Shape{x.dim(0), x.dim(1), od, oh, ow}, std::move(out), {&x},
        [bc, d, h, w](const Impl<T>& o) {
          auto& in = input(o, 0);
          if (!in.requires_grad) return;
          T* g = in.grad_buffer();
          const std::size_t od = d / 2, oh = h / 2, ow = w / 2;
          for (std::size_t n = 0; n < bc; ++n)
            for (std::size_t z = 0; z < d; ++z)
              for (std::size_t y = 0; y < h; ++y)
                for (std::size_t q = 0; q < w; ++q)
                  g[((n * d + z) * h + y) * w + q] +=
                      o.grad[((n * od + z / 2) * oh + y / 2) * ow + q / 2] / T(8);
        });
  }
  const std::size_t od = d * 2, oh = h * 2, ow = w * 2;
  std::vector<T> out(bc * od * oh * ow);
  for (std::size_t n = 0; n < bc; ++n)
    for (std::size_t z = 0; z < od; ++z)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t q = 0; q < ow; ++q)
          out[((n * od + z) * oh + y) * ow + q] = xd[((n * d + z / 2) * h + y / 2) * w + q / 2];
  return detail::make_result<T>(
      "resample_up2", Shape{x.dim(0), x.dim(1), od, oh, ow}, std::move(out), {&x},
      [bc, d, h, w](const Impl<T>& o) {
        auto& in = input(o, 0);
        if (!in.requires_grad) return;
        T* g = in.grad_buffer();
        const std::size_t od = d * 2, oh = h * 2, ow = w * 2;
        for (std::size_t n = 0; n < bc; ++n)
          for (std::size_t z = 0; z < d; ++z)
            for (std::size_t y = 0; y < h; ++y)
              for (std::size_t q = 0; q < w; ++q) {
                double acc = 0.0;
                for (std::size_t dz = 0; dz < 2; ++dz)
                  for (std::size_t dy = 0; dy < 2; ++dy)
                    for (std::size_t dx = 0; dx < 2; ++dx)
                      acc += o.grad[((n * od + 2 * z + dz) * oh + 2 * y + dy) * ow + 2 * q + dx];
                g[((n * d + z) * h + y) * w + q] += static_cast<T>(acc);
              }
      });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& ref = parts[0].shape();
  require(axis < ref.size(), "concat: axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    require(p.rank() == ref.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < ref.size(); ++i)
      require(i == axis || p.dim(i) == ref[i],
              "concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(ref));
    lens.push_back(p.dim(axis));
    out_shape[axis] += p.dim(axis);
  }
  const auto s = split_at(out_shape, axis);
  std::vector<T> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto src = parts[k].data();
    const std::size_t chunk = lens[k] * s.inner;
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(src.data() + o * chunk, chunk, out.data() + o * s.len * s.inner + offset);
    offset += chunk;
  }
  std::vector<const Tensor<T>*> ins;
  for (const auto& p : parts) ins.push_back(&p);
  return detail::make_result<T>("concat", std::move(out_shape), std::move(out), ins,
                                [s, lens](const Impl<T>& o) {
                                  std::size_t offset = 0;
                                  for (std::size_t k = 0; k < lens.size(); ++k) {
                                    auto& in = input(o, k);
                                    const std::size_t chunk = lens[k] * s.inner;
                                    if (in.requires_grad) {
                                      T* g = in.grad_buffer();
                                      for (std::size_t ou = 0; ou < s.outer; ++ou) {
                                        const T* src = o.grad.data() + ou * s.len * s.inner + offset;
                                        for (std::size_t i = 0; i < chunk; ++i)
                                          g[ou * chunk + i] += src[i];
                                      }
                                    }
                                    offset += chunk;
                                  }
                                });
}

template <typename T>
Tensor<T> narrow(const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  require(x.defined() && axis < x.rank(), "narrow: axis out of range");
  require(start + length <= x.dim(axis) && length > 0,
          "narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
              ") exceeds axis length " + std::to_string(x.dim(axis)));
  const auto s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const std::size_t chunk = length * s.inner;
  std::vector<T> out(s.outer * chunk);
  const auto src = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(src.data() + o * s.len * s.inner + start * s.inner, chunk, out.data() + o * chunk);
  return detail::make_result<T>("narrow", std::move(out_shape), std::move(out), {&x},
                                [s, start, chunk](const Impl<T>& o) {
                                  auto& in = input(o, 0);
                                  if (!in.requires_grad) return;
                                  T* g = in.grad_buffer();
                                  for (std::size_t ou = 0; ou < s.outer; ++ou) {
                                    T* dst = g + ou * s.len * s.inner + start * s.inner;
                                    for (std::size_t i = 0; i < chunk; ++i)
                                      dst[i] += o.grad[ou * chunk + i];
                                  }
                                });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require(x.defined() && numel(shape) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  return detail::make_result<T>("reshape", std::move(shape), x.values(), {&x},
                                [](const Impl<T>& o) {
                                  auto& in = input(o, 0);
                                  if (!in.requires_grad) return;
                                  T* g = in.grad_buffer();
                                  for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                                });
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  require(x.defined() && x.rank() == 3, "transpose_last2: input must be rank 3");
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2);
  std::vector<T> out(x.numel());
  const auto src = x.data();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < c; ++k) out[(i * c + k) * b + j] = src[(i * b + j) * c + k];
  return detail::make_result<T>("transpose_last2", Shape{a, c, b}, std::move(out), {&x},
                                [a, b, c](const Impl<T>& o) {
                                  auto& in = input(o, 0);
                                  if (!in.requires_grad) return;
                                  T* g = in.grad_buffer();
                                  for (std::size_t i = 0; i < a; ++i)
                                    for (std::size_t j = 0; j < b; ++j)
                                      for (std::size_t k = 0; k < c; ++k)
                                        g[(i * b + j) * c + k] += o.grad[(i * c + k) * b + j];
                                });
}

template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  require(x.defined() && x.rank() >= 2, "channel_mean: input must be [B,C,...]");
  const std::size_t b = x.dim(0), c = x.dim(1), sp = x.numel() / (b * c);
  Shape out_shape = x.shape();
  out_shape[1] = 1;
  std::vector<T> out(b * sp);
  const auto xd = x.data();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t s = 0; s < sp; ++s) {
      double acc = 0.0;
      for (std::size_t k = 0; k < c; ++k) acc += xd[(n * c + k) * sp + s];
      out[n * sp + s] = static_cast<T>(acc / static_cast<double>(c));
    }
  return detail::make_result<T>("channel_mean", std::move(out_shape), std::move(out), {&x},
                                [b, c, sp](const Impl<T>& o) {
                                  auto& in = input(o, 0);
                                  if (!in.requires_grad) return;
                                  T* g = in.grad_buffer();
                                  for (std::size_t n = 0; n < b; ++n)
                                    for (std::size_t k = 0; k < c; ++k)
                                      for (std::size_t s = 0; s < sp; ++s)
                                        g[(n * c + k) * sp + s] +=
                                            o.grad[n * sp + s] / static_cast<T>(c);
                                });
}

template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
  require(x.defined() && x.rank() >= 2, "channel_max: input must be [B,C,...]");
  const std::size_t b = x.dim(0), c = x.dim(1), sp = x.numel() / (b * c);
  Shape out_shape = x.shape();
  out_shape[1] = 1;
  std::vector<T> out(b * sp);
  std::vector<std::uint32_t> arg(b * sp);
  const auto xd = x.data();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t s = 0; s < sp; ++s) {
      std::uint32_t best = 0;
      T v = xd[n * c * sp + s];
      for (std::size_t k = 1; k < c; ++k) {
        const T cand = xd[(n * c + k) * sp + s];
        if (cand > v) {
          v = cand;
          best = static_cast<std::uint32_t>(k);
        }
      }
      out[n * sp + s] = v;
      arg[n * sp + s] = best;
      if (BranchTrace::active()) BranchTrace::record(best);
    }
  return detail::make_result<T>("channel_max", std::move(out_shape), std::move(out), {&x},
                                [b, c, sp, arg = std::move(arg)](const Impl<T>& o) {
                                  auto& in = input(o, 0);
                                  if (!in.requires_grad) return;
                                  T* g = in.grad_buffer();
                                  for (std::size_t n = 0; n < b; ++n)
                                    for (std::size_t s = 0; s < sp; ++s)
                                      g[(n * c + arg[n * sp + s]) * sp + s] += o.grad[n * sp + s];
                                });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require(x.defined() && x.rank() >= 2, "global_avg_pool: input must be [B,C,...]");
  const std::size_t b = x.dim(0), c = x.dim(1), sp = x.numel() / (b * c);
  std::vector<T> out(b * c);
  const auto xd = x.data();
  for (std::size_t i = 0; i < b * c; ++i) {
    double acc = 0.0;
    for (std::size_t s = 0; s < sp; ++s) acc += xd[i * sp + s];
    out[i] = static_cast<T>(acc / static_cast<double>(sp));
  }
  return detail::make_result<T>("global_avg_pool", Shape{b, c}, std::move(out), {&x},
                                [b, c, sp](const Impl<T>& o) {
                                  auto& in = input(o, 0);
                                  if (!in.requires_grad) return;
                                  T* g = in.grad_buffer();
                                  for (std::size_t i = 0; i < b * c; ++i) {
                                    const T share = o.grad[i] / static_cast<T>(sp);
                                    for (std::size_t s = 0; s < sp; ++s) g[i * sp + s] += share;
                                  }
                                });
}

template <typename T>
Tensor<T> mul_channel(const Tensor<T>& x, const Tensor<T>& gate) {
  require(x.defined() && x.rank() >= 2, "mul_channel: input must be [B,C,...]");
  const std::size_t b = x.dim(0), c = x.dim(1), sp = x.numel() / (b * c);
  require(gate.shape() == Shape{b, c},
          "mul_channel: gate " + shape_str(gate.shape()) + " must be [B,C]");
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  const auto gd = gate.data();
  for (std::size_t i = 0; i < b * c; ++i)
    for (std::size_t s = 0; s < sp; ++s) out[i * sp + s] = xd[i * sp + s] * gd[i];
  return detail::make_result<T>("mul_channel", x.shape(), std::move(out), {&x, &gate},
                                [b, c, sp](const Impl<T>& o) {
                                  auto& xi = input(o, 0);
                                  auto& gi = input(o, 1);
                                  if (xi.requires_grad) {
                                    T* g = xi.grad_buffer();
                                    for (std::size_t i = 0; i < b * c; ++i)
                                      for (std::size_t s = 0; s < sp; ++s)
                                        g[i * sp + s] += o.grad[i * sp + s] * gi.data[i];
                                  }
                                  if (gi.requires_grad) {
                                    T* g = gi.grad_buffer();
                                    for (std::size_t i = 0; i < b * c; ++i) {
                                      double acc = 0.0;
                                      for (std::size_t s = 0; s < sp; ++s)
                                        acc += o.grad[i * sp + s] * xi.data[i * sp + s];
                                      g[i] += static_cast<T>(acc);
                                    }
                                  }
                                });
}

template <typename T>
Tensor<T> mul_spatial(const Tensor<T>& x, const Tensor<T>& gate) {
  require(x.defined() && x.rank() >= 2, "mul_spatial: input must be [B,C,...]");
  const std::size_t b = x.dim(0), c = x.dim(1), sp = x.numel() / (b * c);
  Shape expect = x.shape();
  expect[1] = 1;
  require(gate.shape() == expect, "mul_spatial: gate " + shape_str(gate.shape()) +
                                      " must be " + shape_str(expect));
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  const auto gd = gate.data();
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t k = 0; k < c; ++k)
      for (std::size_t s = 0; s < sp; ++s)
        out[(n * c + k) * sp + s] = xd[(n * c + k) * sp + s] * gd[n * sp + s];
  return detail::make_result<T>("mul_spatial", x.shape(), std::move(out), {&x, &gate},
                                [b, c, sp](const Impl<T>& o) {
                                  auto& xi = input(o, 0);
                                  auto& gi = input(o, 1);
                                  if (xi.requires_grad) {
                                    T* g = xi.grad_buffer();
                                    for (std::size_t n = 0; n < b; ++n)
                                      for (std::size_t k = 0; k < c; ++k)
                                        for (std::size_t s = 0; s < sp; ++s)
                                          g[(n * c + k) * sp + s] +=
                                              o.grad[(n * c + k) * sp + s] * gi.data[n * sp + s];
                                  }
                                  if (gi.requires_grad) {
                                    T* g = gi.grad_buffer();
                                    for (std::size_t n = 0; n < b; ++n)
                                      for (std::size_t s = 0; s < sp; ++s) {
                                        double acc = 0.0;
                                        for (std::size_t k = 0; k < c; ++k)
                                          acc += o.grad[(n * c + k) * sp + s] *
                                                 xi.data[(n * c + k) * sp + s];
                                        g[n * sp + s] += static_cast<T>(acc);
                                      }
                                  }
                                });
}

template <typename T>
Tensor<T> add_batch_broadcast(const Tensor<T>& x, const Tensor<T>& p) {
  require(x.defined() && p.defined() && x.rank() == p.rank() + 1,
          "add_batch_broadcast: rank mismatch");
  require(Shape(x.shape().begin() + 1, x.shape().end()) == p.shape(),
          "add_batch_broadcast: " + shape_str(p.shape()) + " does not match trailing axes of " +
              shape_str(x.shape()));
  const std::size_t b = x.dim(0), n = p.numel();
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  const auto pd = p.data();
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xd[i * n + j] + pd[j];
  return detail::make_result<T>("add_batch_broadcast", x.shape(), std::move(out), {&x, &p},
                                [b, n](const Impl<T>& o) {
                                  auto& xi = input(o, 0);
                                  auto& pi = input(o, 1);
                                  if (xi.requires_grad) {
                                    T* g = xi.grad_buffer();
                                    for (std::size_t i = 0; i < b * n; ++i) g[i] += o.grad[i];
                                  }
                                  if (pi.requires_grad) {
                                    T* g = pi.grad_buffer();
                                    for (std::size_t j = 0; j < n; ++j) {
                                      double acc = 0.0;
                                      for (std::size_t i = 0; i < b; ++i) acc += o.grad[i * n + j];
                                      g[j] += static_cast<T>(acc);
                                    }
                                  }
                                });
}

#define XHVED_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> scale<T>(const Tensor<T>&, double);                                      \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, double);                                 \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                \
  template Tensor<T> mean<T>(const Tensor<T>&);                                               \
  template Tensor<T> add_n<T>(const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                            \
  template Tensor<T> exp<T>(const Tensor<T>&);                                                \
  template Tensor<T> log<T>(const Tensor<T>&);                                                \
  template Tensor<T> square<T>(const Tensor<T>&);                                             \
  template Tensor<T> leaky_relu<T>(const Tensor<T>&, double);                                 \
  template Tensor<T> clamp<T>(const Tensor<T>&, double, double);                              \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                               \
  template Tensor<T> activation<T>(const Tensor<T>&, Activation, double);                     \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> group_norm<T>(const Tensor<T>&, std::size_t, const Tensor<T>&,           \
                                   const Tensor<T>&, double);                                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                   double);                                                   \
  template Tensor<T> resample<T>(const Tensor<T>&, Resample);                                 \
  template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                   \
  template Tensor<T> narrow<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);      \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                     \
  template Tensor<T> transpose_last2<T>(const Tensor<T>&);                                    \
  template Tensor<T> channel_mean<T>(const Tensor<T>&);                                       \
  template Tensor<T> channel_max<T>(const Tensor<T>&);                                        \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                    \
  template Tensor<T> mul_channel<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> mul_spatial<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add_batch_broadcast<T>(const Tensor<T>&, const Tensor<T>&);

XHVED_INSTANTIATE_OPS(float)
XHVED_INSTANTIATE_OPS(double)

}  // namespace xhved::ops
