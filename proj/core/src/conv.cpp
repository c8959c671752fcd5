#include <Eigen/Core>
#include <algorithm>
#include <cstring>

#include "xhved/ops.hpp"

namespace xhved::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  std::size_t cin, d, h, w;
  std::size_t k, stride, pad;
  std::size_t od, oh, ow;

  std::size_t in_volume() const { return d * h * w; }
  std::size_t out_volume() const { return od * oh * ow; }
  std::size_t patch() const { return cin * k * k * k; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Input coordinate for output index `o` and kernel tap `t`, or -1 if it
// falls in the zero padding.
inline long tap(std::size_t o, std::size_t t, const ConvGeometry& g, std::size_t extent) {
  const long i = static_cast<long>(o * g.stride + t) - static_cast<long>(g.pad);
  return (i < 0 || i >= static_cast<long>(extent)) ? -1 : i;
}

// Output positions are processed in chunks of whole (z,y) lines so that the
// column buffer stays cache resident.
struct Chunk {
  std::size_t first_line, lines;
};

std::vector<Chunk> make_chunks(const ConvGeometry& g) {
  constexpr std::size_t kTargetBytes = 256 * 1024;
  const std::size_t total = g.od * g.oh;
  const std::size_t per_line = std::max<std::size_t>(1, g.patch() * g.ow * sizeof(float));
  const std::size_t lines = std::clamp<std::size_t>(kTargetBytes / per_line, 1, total);
  std::vector<Chunk> out;
  for (std::size_t l = 0; l < total; l += lines) out.push_back({l, std::min(lines, total - l)});
  return out;
}

template <typename T>
void im2col(const T* x, const ConvGeometry& g, const Chunk& ch, T* cols) {
  const std::size_t p = ch.lines * g.ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * g.in_volume();
    for (std::size_t kz = 0; kz < g.k; ++kz)
      for (std::size_t ky = 0; ky < g.k; ++ky)
        for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
          T* dst = cols + row * p;
          for (std::size_t li = 0; li < ch.lines; ++li) {
            const std::size_t line = ch.first_line + li;
            const long iz = tap(line / g.oh, kz, g, g.d);
            const long iy = tap(line % g.oh, ky, g, g.h);
            T* out = dst + li * g.ow;
            if (iz < 0 || iy < 0) {
              std::fill_n(out, g.ow, T(0));
              continue;
            }
            const T* src = xc + (static_cast<std::size_t>(iz) * g.h + iy) * g.w;
            if (g.stride == 1) {
              // Contiguous interior, zero fringe.
              const long off = static_cast<long>(kx) - static_cast<long>(g.pad);
              const long lo = std::clamp<long>(-off, 0, static_cast<long>(g.ow));
              const long hi = std::clamp<long>(static_cast<long>(g.w) - off, lo, static_cast<long>(g.ow));
              std::fill(out, out + lo, T(0));
              std::copy(src + lo + off, src + hi + off, out + lo);
              std::fill(out + hi, out + g.ow, T(0));
            } else {
              for (std::size_t q = 0; q < g.ow; ++q) {
                const long ix = tap(q, kx, g, g.w);
                out[q] = ix < 0 ? T(0) : src[ix];
              }
            }
          }
        }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, const Chunk& ch, T* gx) {
  const std::size_t p = ch.lines * g.ow;
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    T* gc = gx + c * g.in_volume();
    for (std::size_t kz = 0; kz < g.k; ++kz)
      for (std::size_t ky = 0; ky < g.k; ++ky)
        for (std::size_t kx = 0; kx < g.k; ++kx, ++row) {
          const T* src = cols + row * p;
          for (std::size_t li = 0; li < ch.lines; ++li) {
            const std::size_t line = ch.first_line + li;
            const long iz = tap(line / g.oh, kz, g, g.d);
            const long iy = tap(line % g.oh, ky, g, g.h);
            if (iz < 0 || iy < 0) continue;
            const T* in = src + li * g.ow;
            T* dst = gc + (static_cast<std::size_t>(iz) * g.h + iy) * g.w;
            if (g.stride == 1) {
              const long off = static_cast<long>(kx) - static_cast<long>(g.pad);
              const long lo = std::max<long>(0, -off);
              const long hi = std::min<long>(static_cast<long>(g.ow), static_cast<long>(g.w) - off);
              for (long q = lo; q < hi; ++q) dst[q + off] += in[q];
            } else {
              for (std::size_t q = 0; q < g.ow; ++q) {
                const long ix = tap(q, kx, g, g.w);
                if (ix >= 0) dst[ix] += in[q];
              }
            }
          }
        }
  }
}

// Zero-padded copy of one channel volume.
template <typename T>
void pad_channel(const T* x, const ConvGeometry& g, T* out) {
  const std::size_t pd = g.d + 2 * g.pad, ph = g.h + 2 * g.pad, pw = g.w + 2 * g.pad;
  std::fill_n(out, pd * ph * pw, T(0));
  for (std::size_t z = 0; z < g.d; ++z)
    for (std::size_t y = 0; y < g.h; ++y)
      std::copy_n(x + (z * g.h + y) * g.w, g.w, out + ((z + g.pad) * ph + y + g.pad) * pw + g.pad);
}

// Few output channels: a padded-line stencil beats building columns.
bool use_direct(const ConvGeometry& g, std::size_t cout) {
  return g.stride == 1 && g.k > 1 && cout <= 2;
}

template <typename T>
void direct_forward(const T* x, const T* w, const ConvGeometry& g, std::size_t cout, T* y) {
  const std::size_t ph = g.h + 2 * g.pad, pw = g.w + 2 * g.pad, k3 = g.k * g.k * g.k;
  std::vector<T> padded((g.d + 2 * g.pad) * ph * pw);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    pad_channel(x + ci * g.in_volume(), g, padded.data());
    for (std::size_t co = 0; co < cout; ++co) {
      const T* wk = w + (co * g.cin + ci) * k3;
      T* yc = y + co * g.out_volume();
      for (std::size_t kz = 0; kz < g.k; ++kz)
        for (std::size_t ky = 0; ky < g.k; ++ky)
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const T wv = wk[(kz * g.k + ky) * g.k + kx];
            for (std::size_t z = 0; z < g.od; ++z)
              for (std::size_t yy = 0; yy < g.oh; ++yy) {
                const T* src = padded.data() + ((z + kz) * ph + yy + ky) * pw + kx;
                T* dst = yc + (z * g.oh + yy) * g.ow;
                for (std::size_t q = 0; q < g.ow; ++q) dst[q] += wv * src[q];
              }
          }
    }
  }
}

template <typename T>
void direct_backward(const T* x, const T* w, const T* gy, const ConvGeometry& g, std::size_t cout,
                     T* gx, double* gw) {
  const std::size_t ph = g.h + 2 * g.pad, pw = g.w + 2 * g.pad, k3 = g.k * g.k * g.k;
  const std::size_t pvol = (g.d + 2 * g.pad) * ph * pw;
  std::vector<T> padded(pvol), gpad(pvol);
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    if (gw) pad_channel(x + ci * g.in_volume(), g, padded.data());
    if (gx) std::fill(gpad.begin(), gpad.end(), T(0));
    for (std::size_t co = 0; co < cout; ++co) {
      const T* wk = w + (co * g.cin + ci) * k3;
      const T* gc = gy + co * g.out_volume();
      for (std::size_t kz = 0; kz < g.k; ++kz)
        for (std::size_t ky = 0; ky < g.k; ++ky)
          for (std::size_t kx = 0; kx < g.k; ++kx) {
            const std::size_t t = (kz * g.k + ky) * g.k + kx;
            const T wv = wk[t];
            double acc = 0.0;
            for (std::size_t z = 0; z < g.od; ++z)
              for (std::size_t yy = 0; yy < g.oh; ++yy) {
                const std::size_t base = ((z + kz) * ph + yy + ky) * pw + kx;
                const T* grow = gc + (z * g.oh + yy) * g.ow;
                if (gx) {
                  T* dst = gpad.data() + base;
                  for (std::size_t q = 0; q < g.ow; ++q) dst[q] += wv * grow[q];
                }
                if (gw) {
                  const T* src = padded.data() + base;
                  T lanes[16] = {};
                  std::size_t q = 0;
                  for (; q + 16 <= g.ow; q += 16)
                    for (std::size_t j = 0; j < 16; ++j) lanes[j] += grow[q + j] * src[q + j];
                  for (; q < g.ow; ++q) lanes[q % 16] += grow[q] * src[q];
                  for (T l : lanes) acc += l;
                }
              }
            if (gw) gw[(co * g.cin + ci) * k3 + t] += acc;
          }
    }
    if (gx) {
      T* gxc = gx + ci * g.in_volume();
      for (std::size_t z = 0; z < g.d; ++z)
        for (std::size_t y = 0; y < g.h; ++y) {
          const T* src = gpad.data() + ((z + g.pad) * ph + y + g.pad) * pw + g.pad;
          T* dst = gxc + (z * g.h + y) * g.w;
          for (std::size_t q = 0; q < g.w; ++q) dst[q] += src[q];
        }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  require(x.defined() && x.rank() == 5, "conv3d: input must be [B,Cin,D,H,W]");
  require(kernel.defined() && kernel.rank() == 5, "conv3d: kernel must be [Cout,Cin,k,k,k]");
  const std::size_t k = kernel.dim(2);
  require(kernel.dim(3) == k && kernel.dim(4) == k && k % 2 == 1,
          "conv3d: kernel must be cubic with odd size, got " + shape_str(kernel.shape()));
  require(kernel.dim(1) == x.dim(1), "conv3d: kernel expects " + std::to_string(kernel.dim(1)) +
                                         " input channels, input has " + std::to_string(x.dim(1)));
  require(stride >= 1, "conv3d: stride must be >= 1");
  const std::size_t b = x.dim(0), cout = kernel.dim(0);
  ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), x.dim(4), k, stride, padding, 0, 0, 0};
  for (std::size_t e : {g.d, g.h, g.w})
    require(e + 2 * padding >= k, "conv3d: spatial extent smaller than kernel");
  g.od = (g.d + 2 * padding - k) / stride + 1;
  g.oh = (g.h + 2 * padding - k) / stride + 1;
  g.ow = (g.w + 2 * padding - k) / stride + 1;
  if (bias.defined()) require(bias.shape() == Shape{cout}, "conv3d: bias must be [Cout]");

  const std::size_t p = g.out_volume(), kk = g.patch();
  std::vector<T> out(b * cout * p);
  CMapMat<T> wmat(kernel.data().data(), cout, kk);
  if (use_direct(g, cout)) {
    for (std::size_t n = 0; n < b; ++n)
      direct_forward(x.data().data() + n * g.cin * g.in_volume(), kernel.data().data(), g, cout,
                     out.data() + n * cout * p);
  } else if (g.pointwise()) {
    for (std::size_t n = 0; n < b; ++n) {
      MapMat<T> y(out.data() + n * cout * p, cout, p);
      y.noalias() = wmat * CMapMat<T>(x.data().data() + n * g.cin * p, kk, p);
    }
  } else {
    const auto chunks = make_chunks(g);
    std::vector<T> cols(kk * chunks.front().lines * g.ow);
    std::vector<T> tile(cout * chunks.front().lines * g.ow);
    for (std::size_t n = 0; n < b; ++n) {
      const T* xn = x.data().data() + n * g.cin * g.in_volume();
      T* yn = out.data() + n * cout * p;
      for (const Chunk& ch : chunks) {
        const std::size_t cp = ch.lines * g.ow, off = ch.first_line * g.ow;
        im2col(xn, g, ch, cols.data());
        MapMat<T> t(tile.data(), cout, cp);
        t.noalias() = wmat * CMapMat<T>(cols.data(), kk, cp);
        for (std::size_t c = 0; c < cout; ++c)
          std::copy_n(tile.data() + c * cp, cp, yn + c * p + off);
      }
    }
  }
  if (bias.defined()) {
    for (std::size_t n = 0; n < b; ++n)
      for (std::size_t c = 0; c < cout; ++c) {
        T* row = out.data() + (n * cout + c) * p;
        const T bc = bias.data()[c];
        for (std::size_t i = 0; i < p; ++i) row[i] += bc;
      }
  }
  std::vector<const Tensor<T>*> ins{&x, &kernel};
  if (bias.defined()) ins.push_back(&bias);
  return detail::make_result<T>(
      "conv3d", Shape{b, cout, g.od, g.oh, g.ow}, std::move(out), ins,
      [g, b, cout](const TensorImpl<T>& o) {
        auto& xi = *o.grad_fn->inputs[0];
        auto& wi = *o.grad_fn->inputs[1];
        const std::size_t p = g.out_volume(), kk = g.patch();
        CMapMat<T> wmat(wi.data.data(), cout, kk);
        if (use_direct(g, cout)) {
          std::vector<double> gw(wi.requires_grad ? cout * kk : 0, 0.0);
          for (std::size_t n = 0; n < b; ++n)
            direct_backward(xi.data.data() + n * g.cin * g.in_volume(), wi.data.data(),
                            o.grad.data() + n * cout * p, g, cout,
                            xi.requires_grad ? xi.grad_buffer() + n * g.cin * g.in_volume() : nullptr,
                            wi.requires_grad ? gw.data() : nullptr);
          if (wi.requires_grad) {
            T* dst = wi.grad_buffer();
            for (std::size_t i = 0; i < gw.size(); ++i) dst[i] += static_cast<T>(gw[i]);
          }
        } else if (g.pointwise()) {
          for (std::size_t n = 0; n < b; ++n) {
            CMapMat<T> gy(o.grad.data() + n * cout * p, cout, p);
            const T* xn = xi.data.data() + n * g.cin * p;
            if (wi.requires_grad)
              MapMat<T>(wi.grad_buffer(), cout, kk).noalias() += gy * CMapMat<T>(xn, kk, p).transpose();
            if (xi.requires_grad)
              MapMat<T>(xi.grad_buffer() + n * g.cin * p, kk, p).noalias() += wmat.transpose() * gy;
          }
        } else {
          const auto chunks = make_chunks(g);
          const std::size_t max_cp = chunks.front().lines * g.ow;
          std::vector<T> cols(kk * max_cp), gtile(cout * max_cp);
          RowMat<T> gw = RowMat<T>::Zero(cout, kk);
          for (std::size_t n = 0; n < b; ++n) {
            const T* xn = xi.data.data() + n * g.cin * g.in_volume();
            const T* gyn = o.grad.data() + n * cout * p;
            for (const Chunk& ch : chunks) {
              const std::size_t cp = ch.lines * g.ow, off = ch.first_line * g.ow;
              for (std::size_t c = 0; c < cout; ++c)
                std::copy_n(gyn + c * p + off, cp, gtile.data() + c * cp);
              CMapMat<T> gy(gtile.data(), cout, cp);
              if (wi.requires_grad) {
                im2col(xn, g, ch, cols.data());
                gw.noalias() += gy * CMapMat<T>(cols.data(), kk, cp).transpose();
              }
              if (xi.requires_grad) {
                MapMat<T>(cols.data(), kk, cp).noalias() = wmat.transpose() * gy;
                col2im_add(cols.data(), g, ch, xi.grad_buffer() + n * g.cin * g.in_volume());
              }
            }
          }
          if (wi.requires_grad) MapMat<T>(wi.grad_buffer(), cout, kk) += gw;
        }
        if (o.grad_fn->inputs.size() > 2) {
          auto& bi = *o.grad_fn->inputs[2];
          if (bi.requires_grad) {
            T* gb = bi.grad_buffer();
            for (std::size_t c = 0; c < cout; ++c) {
              double acc = 0.0;
              for (std::size_t n = 0; n < b; ++n) {
                const T* row = o.grad.data() + (n * cout + c) * p;
                for (std::size_t i = 0; i < p; ++i) acc += row[i];
              }
              gb[c] += static_cast<T>(acc);
            }
          }
        }
      });
}

template Tensor<float> conv3d<float>(const Tensor<float>&, const Tensor<float>&,
                                     const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> conv3d<double>(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, std::size_t, std::size_t);

}  // namespace xhved::ops
