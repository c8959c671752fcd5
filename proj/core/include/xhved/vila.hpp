#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "xhved/layers.hpp"
#include "xhved/mlstm.hpp"

namespace xhved::vila {

enum class Direction { forward, backward };

/// [B,C,D,H,W] -> [B,N,C] with token n = d·H·W + h·W + w.
template <typename T> Tensor<T> flatten_tokens(const Tensor<T>& x);
/// Inverse of flatten_tokens.
template <typename T>
Tensor<T> detokenize(const Tensor<T>& tokens, std::array<std::size_t, 3> extent);

/// Shared linear projection plus a learnable position embedding [N,C].
template <typename T>
class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(std::size_t channels, std::size_t tokens, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  void set_identity();
  void collect(const std::string& prefix, ParamList<T>& out) const;

  LinearLayer<T> projection;
  Tensor<T> position;
};

template <typename T>
struct BlockResult {
  Tensor<T> tokens;
  MlstmState<T> state;
};

/// Pre-norm mLSTM block: q/k/v and gate projections per token, a scan over
/// the tokens in the block's direction, output projection, residual.
template <typename T>
class VilBlock {
 public:
  VilBlock() = default;
  VilBlock(std::size_t dim, Direction direction, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& tokens) const { return run(tokens, nullptr).tokens; }
  /// Continues from `carry` when given (streaming over consecutive chunks).
  BlockResult<T> run(const Tensor<T>& tokens, const MlstmState<T>* carry) const;
  void zero();
  void collect(const std::string& prefix, ParamList<T>& out) const;
  Direction direction() const { return direction_; }

  LayerNormLayer<T> norm;
  LinearLayer<T> query, key, value, gates, output;

 private:
  std::size_t dim_ = 0;
  Direction direction_ = Direction::forward;
};

/// Tokenize → alternating-direction block stack → detokenize → channel
/// softmax gate; out = x ⊙ gate + x.
template <typename T>
class Vila {
 public:
  Vila() = default;
  Vila(std::size_t channels, std::array<std::size_t, 3> extent, std::size_t blocks, Rng& rng);

  Tensor<T> operator()(const Tensor<T>& x) const;
  Tensor<T> gate(const Tensor<T>& x) const;
  void collect(const std::string& prefix, ParamList<T>& out) const;

  Tokenizer<T> tokenizer;
  std::vector<VilBlock<T>> blocks;

 private:
  std::array<std::size_t, 3> extent_{};
};

}  // namespace xhved::vila
