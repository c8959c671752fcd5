#pragma once

#include <cstddef>

#include "xhved/tensor.hpp"

namespace xhved::vila {

/// Recurrent state of one mLSTM cell: matrix memory C [B,d,d], normalizer
/// n [B,d] and log-domain stabilizer m [B].
template <typename T>
struct MlstmState {
  Tensor<T> memory;
  Tensor<T> normalizer;
  Tensor<T> stabilizer;

  static MlstmState zeros(std::size_t batch, std::size_t dim);
  std::size_t batch() const { return memory.dim(0); }
  std::size_t dim() const { return memory.dim(1); }
};

template <typename T>
struct MlstmStepResult {
  Tensor<T> hidden;  // [B,d]
  MlstmState<T> state;
};

/// One stabilized exponential-gating update of the matrix memory.
///
///   m' = max(log σ(f̃) + m, ĩ)
///   i' = exp(ĩ − m'),  f' = exp(log σ(f̃) + m − m')
///   C' = f'·C + i'·v kᵀ,  n' = f'·n + i'·k      (k pre-scaled by d^-1/2)
///   h  = σ(õ) ⊙ (C' q) / max(|n'ᵀq|, 1)
///
/// q, k, v are [B,d]; the gate pre-activations are [B]. Differentiable with
/// respect to every input including the incoming state.
template <typename T>
MlstmStepResult<T> mlstm_step(const MlstmState<T>& state, const Tensor<T>& query,
                              const Tensor<T>& key, const Tensor<T>& value,
                              const Tensor<T>& input_gate, const Tensor<T>& forget_gate,
                              const Tensor<T>& output_gate);

}  // namespace xhved::vila
