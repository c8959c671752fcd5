#include "xhved/mlstm.hpp"

#include <algorithm>
#include <cmath>

#include "xhved/ops.hpp"

namespace xhved::vila {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log σ(x) without overflow.
double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

// Per-sample quantities that the backward rule reuses.
struct StepCache {
  double a = 0;       // log σ(f̃) + m
  double m_new = 0;
  double i_act = 0;   // i'
  double f_act = 0;   // f'
  double o_act = 0;   // σ(õ)
  double den_raw = 0; // n'ᵀq
  double den = 0;
};

}  // namespace

template <typename T>
MlstmState<T> MlstmState<T>::zeros(std::size_t batch, std::size_t dim) {
  return {Tensor<T>(Shape{batch, dim, dim}), Tensor<T>(Shape{batch, dim}), Tensor<T>(Shape{batch})};
}

template <typename T>
MlstmStepResult<T> mlstm_step(const MlstmState<T>& state, const Tensor<T>& query,
                              const Tensor<T>& key, const Tensor<T>& value,
                              const Tensor<T>& input_gate, const Tensor<T>& forget_gate,
                              const Tensor<T>& output_gate) {
  require(state.memory.defined() && state.memory.rank() == 3, "mlstm_step: memory must be [B,d,d]");
  const std::size_t b = state.memory.dim(0), d = state.memory.dim(1);
  require(d >= 1 && state.memory.dim(2) == d, "mlstm_step: memory must be square per sample");
  require(state.normalizer.shape() == Shape{b, d}, "mlstm_step: normalizer must be [B,d]");
  require(state.stabilizer.shape() == Shape{b}, "mlstm_step: stabilizer must be [B]");
  for (const auto* t : {&query, &key, &value})
    require(t->defined() && t->shape() == Shape{b, d}, "mlstm_step: q/k/v must be [B,d]");
  for (const auto* t : {&input_gate, &forget_gate, &output_gate})
    require(t->defined() && t->shape() == Shape{b}, "mlstm_step: gate pre-activations must be [B]");

  const std::size_t dd = d * d;
  const std::size_t row = dd + 2 * d + 1;  // [C' | n' | m' | h]
  const double kscale = 1.0 / std::sqrt(static_cast<double>(d));
  std::vector<T> packed(b * row);
  std::vector<StepCache> cache(b);

  for (std::size_t s = 0; s < b; ++s) {
    const T* C = state.memory.data().data() + s * dd;
    const T* n = state.normalizer.data().data() + s * d;
    const T* q = query.data().data() + s * d;
    const T* k = key.data().data() + s * d;
    const T* v = value.data().data() + s * d;
    T* out = packed.data() + s * row;
    StepCache& c = cache[s];
    c.a = log_sigmoid(forget_gate.data()[s]) + state.stabilizer.data()[s];
    const double ig = input_gate.data()[s];
    c.m_new = std::max(c.a, ig);
    c.i_act = std::exp(ig - c.m_new);
    c.f_act = std::exp(c.a - c.m_new);
    c.o_act = sigmoid(output_gate.data()[s]);
    T* C2 = out;
    T* n2 = out + dd;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t col = 0; col < d; ++col)
        C2[r * d + col] = static_cast<T>(c.f_act * C[r * d + col] + c.i_act * v[r] * (k[col] * kscale));
    double den_raw = 0.0;
    for (std::size_t col = 0; col < d; ++col) {
      n2[col] = static_cast<T>(c.f_act * n[col] + c.i_act * (k[col] * kscale));
      den_raw += static_cast<double>(n2[col]) * q[col];
    }
    c.den_raw = den_raw;
    c.den = std::max(std::abs(den_raw), 1.0);
    if (BranchTrace::active())
      BranchTrace::record((c.a >= ig) + 2 * (den_raw > 1.0) + 4 * (den_raw < -1.0));
    out[dd + d] = static_cast<T>(c.m_new);
    T* h = out + dd + d + 1;
    for (std::size_t r = 0; r < d; ++r) {
      double num = 0.0;
      for (std::size_t col = 0; col < d; ++col) num += static_cast<double>(C2[r * d + col]) * q[col];
      h[r] = static_cast<T>(c.o_act * num / c.den);
    }
  }

  auto packed_t = detail::make_result<T>(
      "mlstm_step", Shape{b, row}, std::move(packed),
      {&state.memory, &state.normalizer, &state.stabilizer, &query, &key, &value, &input_gate,
       &forget_gate, &output_gate},
      [b, d, dd, row, kscale, cache = std::move(cache)](const TensorImpl<T>& o) {
        const auto& ins = o.grad_fn->inputs;
        auto& Ci = *ins[0];
        auto& ni = *ins[1];
        auto& mi = *ins[2];
        auto& qi = *ins[3];
        auto& ki = *ins[4];
        auto& vi = *ins[5];
        auto& ii = *ins[6];
        auto& fi = *ins[7];
        auto& oi = *ins[8];
        std::vector<double> gC2(dd), gn2(d), gnum(d);
        for (std::size_t s = 0; s < b; ++s) {
          const StepCache& c = cache[s];
          const T* C = Ci.data.data() + s * dd;
          const T* n = ni.data.data() + s * d;
          const T* q = qi.data.data() + s * d;
          const T* k = ki.data.data() + s * d;
          const T* v = vi.data.data() + s * d;
          const T* out = o.data.data() + s * row;
          const T* C2 = out;
          const T* n2 = out + dd;
          const T* g = o.grad.data() + s * row;
          const T* gh = g + dd + d + 1;

          // h = o · num / den
          double go = 0.0, gden = 0.0;
          for (std::size_t r = 0; r < d; ++r) {
            double num = 0.0;
            for (std::size_t col = 0; col < d; ++col)
              num += static_cast<double>(C2[r * d + col]) * q[col];
            const double htilde = num / c.den;
            go += gh[r] * htilde;
            const double gt = gh[r] * c.o_act;
            gnum[r] = gt / c.den;
            gden -= gt * htilde / c.den;
          }
          const double gden_raw =
              std::abs(c.den_raw) > 1.0 ? gden * (c.den_raw > 0 ? 1.0 : -1.0) : 0.0;

          for (std::size_t i = 0; i < dd; ++i) gC2[i] = g[i];
          for (std::size_t i = 0; i < d; ++i) gn2[i] = g[dd + i] + gden_raw * q[i];
          for (std::size_t r = 0; r < d; ++r)
            for (std::size_t col = 0; col < d; ++col) gC2[r * d + col] += gnum[r] * q[col];

          if (qi.requires_grad) {
            T* gq = qi.grad_buffer() + s * d;
            for (std::size_t col = 0; col < d; ++col) {
              double acc = gden_raw * n2[col];
              for (std::size_t r = 0; r < d; ++r) acc += gnum[r] * C2[r * d + col];
              gq[col] += static_cast<T>(acc);
            }
          }

          // C' = f'C + i' v ksᵀ,  n' = f'n + i' ks
          double gf = 0.0, gi = 0.0;
          for (std::size_t r = 0; r < d; ++r)
            for (std::size_t col = 0; col < d; ++col) {
              gf += gC2[r * d + col] * C[r * d + col];
              gi += gC2[r * d + col] * v[r] * (k[col] * kscale);
            }
          for (std::size_t col = 0; col < d; ++col) {
            gf += gn2[col] * n[col];
            gi += gn2[col] * (k[col] * kscale);
          }
          if (Ci.requires_grad) {
            T* gc = Ci.grad_buffer() + s * dd;
            for (std::size_t i = 0; i < dd; ++i) gc[i] += static_cast<T>(c.f_act * gC2[i]);
          }
          if (ni.requires_grad) {
            T* gn = ni.grad_buffer() + s * d;
            for (std::size_t i = 0; i < d; ++i) gn[i] += static_cast<T>(c.f_act * gn2[i]);
          }
          if (vi.requires_grad) {
            T* gv = vi.grad_buffer() + s * d;
            for (std::size_t r = 0; r < d; ++r) {
              double acc = 0.0;
              for (std::size_t col = 0; col < d; ++col) acc += gC2[r * d + col] * (k[col] * kscale);
              gv[r] += static_cast<T>(c.i_act * acc);
            }
          }
          if (ki.requires_grad) {
            T* gk = ki.grad_buffer() + s * d;
            for (std::size_t col = 0; col < d; ++col) {
              double acc = gn2[col];
              for (std::size_t r = 0; r < d; ++r) acc += gC2[r * d + col] * v[r];
              gk[col] += static_cast<T>(c.i_act * acc * kscale);
            }
          }

          // f' = exp(a − m'), i' = exp(ĩ − m'), m' = max(a, ĩ)
          double ga = gf * c.f_act;
          double gig = gi * c.i_act;
          const double gm_new = g[dd + d] - gf * c.f_act - gi * c.i_act;
          const double ig_pre = ii.data[s];
          if (c.a >= ig_pre)
            ga += gm_new;
          else
            gig += gm_new;

          if (ii.requires_grad) ii.grad_buffer()[s] += static_cast<T>(gig);
          if (mi.requires_grad) mi.grad_buffer()[s] += static_cast<T>(ga);
          if (fi.requires_grad) {
            // d/dx log σ(x) = 1 − σ(x)
            fi.grad_buffer()[s] += static_cast<T>(ga * (1.0 - sigmoid(fi.data[s])));
          }
          if (oi.requires_grad)
            oi.grad_buffer()[s] += static_cast<T>(go * c.o_act * (1.0 - c.o_act));
        }
      });

  MlstmStepResult<T> result;
  result.state.memory = ops::reshape(ops::narrow(packed_t, 1, 0, dd), Shape{b, d, d});
  result.state.normalizer = ops::narrow(packed_t, 1, dd, d);
  result.state.stabilizer = ops::reshape(ops::narrow(packed_t, 1, dd + d, 1), Shape{b});
  result.hidden = ops::narrow(packed_t, 1, dd + d + 1, d);
  return result;
}

template struct MlstmState<float>;
template struct MlstmState<double>;
template MlstmStepResult<float> mlstm_step<float>(const MlstmState<float>&, const Tensor<float>&,
                                                  const Tensor<float>&, const Tensor<float>&,
                                                  const Tensor<float>&, const Tensor<float>&,
                                                  const Tensor<float>&);
template MlstmStepResult<double> mlstm_step<double>(const MlstmState<double>&,
                                                    const Tensor<double>&, const Tensor<double>&,
                                                    const Tensor<double>&, const Tensor<double>&,
                                                    const Tensor<double>&, const Tensor<double>&);

}  // namespace xhved::vila
