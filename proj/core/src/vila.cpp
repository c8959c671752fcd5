#include "xhved/vila.hpp"

#include <algorithm>

namespace xhved::vila {

template <typename T>
Tensor<T> flatten_tokens(const Tensor<T>& x) {
  require(x.defined() && x.rank() == 5, "tokenize: input must be [B,C,D,H,W]");
  const std::size_t b = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3) * x.dim(4);
  return ops::transpose_last2(ops::reshape(x, Shape{b, c, n}));
}

template <typename T>
Tensor<T> detokenize(const Tensor<T>& tokens, std::array<std::size_t, 3> extent) {
  require(tokens.defined() && tokens.rank() == 3, "detokenize: tokens must be [B,N,C]");
  require(tokens.dim(1) == extent[0] * extent[1] * extent[2],
          "detokenize: " + std::to_string(tokens.dim(1)) + " tokens do not fill the grid");
  const std::size_t b = tokens.dim(0), c = tokens.dim(2);
  return ops::reshape(ops::transpose_last2(tokens), Shape{b, c, extent[0], extent[1], extent[2]});
}

template <typename T>
Tokenizer<T>::Tokenizer(std::size_t channels, std::size_t tokens, Rng& rng)
    : projection(channels, channels, rng), position(randn<T>(Shape{tokens, channels}, rng, 0.02)) {}

template <typename T>
Tensor<T> Tokenizer<T>::operator()(const Tensor<T>& x) const {
  const Tensor<T> t = flatten_tokens(x);
  require(t.dim(1) == position.dim(0), "tokenize: expected " + std::to_string(position.dim(0)) +
                                           " tokens, got " + std::to_string(t.dim(1)));
  return ops::add_batch_broadcast(projection(t), position);
}

template <typename T>
void Tokenizer<T>::set_identity() {
  const std::size_t c = projection.weight.dim(0);
  projection.zero();
  for (std::size_t i = 0; i < c; ++i) projection.weight.data()[i * c + i] = T(1);
  std::fill(position.data().begin(), position.data().end(), T(0));
}

template <typename T>
void Tokenizer<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  projection.collect(prefix + ".projection", out);
  out.push_back({prefix + ".position", position});
}

template <typename T>
VilBlock<T>::VilBlock(std::size_t dim, Direction direction, Rng& rng)
    : norm(dim),
      query(dim, dim, rng),
      key(dim, dim, rng),
      value(dim, dim, rng),
      gates(dim, 3, rng),
      output(dim, dim, rng),
      dim_(dim),
      direction_(direction) {
  // Forget gate starts open so early tokens are remembered.
  gates.bias.data()[1] = T(3);
}

template <typename T>
BlockResult<T> VilBlock<T>::run(const Tensor<T>& tokens, const MlstmState<T>* carry) const {
  require(tokens.defined() && tokens.rank() == 3 && tokens.dim(2) == dim_,
          "vil_block: tokens must be [B,N," + std::to_string(dim_) + "], got " +
              shape_str(tokens.shape()));
  const std::size_t b = tokens.dim(0), n = tokens.dim(1), d = dim_;
  const Tensor<T> x = norm(tokens);
  const Tensor<T> q = query(x), k = key(x), v = value(x), g = gates(x);

  MlstmState<T> state = carry ? *carry : MlstmState<T>::zeros(b, d);
  if (carry)
    require(state.batch() == b && state.dim() == d, "vil_block: carried state does not match");
  std::vector<Tensor<T>> hidden(n);
  auto token = [&](const Tensor<T>& src, std::size_t t) {
    return ops::reshape(ops::narrow(src, 1, t, 1), Shape{b, src.dim(2)});
  };
  auto gate = [&](const Tensor<T>& gt, std::size_t j) {
    return ops::reshape(ops::narrow(gt, 1, j, 1), Shape{b});
  };
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t t = direction_ == Direction::forward ? s : n - 1 - s;
    const Tensor<T> gt = token(g, t);
    auto step = mlstm_step(state, token(q, t), token(k, t), token(v, t), gate(gt, 0), gate(gt, 1),
                           gate(gt, 2));
    hidden[t] = ops::reshape(step.hidden, Shape{b, 1, d});
    state = std::move(step.state);
  }
  const Tensor<T> h = n == 1 ? hidden[0] : ops::concat(hidden, 1);
  return {ops::add(tokens, output(h)), std::move(state)};
}

template <typename T>
void VilBlock<T>::zero() {
  for (auto* l : {&query, &key, &value, &gates, &output}) l->zero();
}

template <typename T>
void VilBlock<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  norm.collect(prefix + ".norm", out);
  query.collect(prefix + ".query", out);
  key.collect(prefix + ".key", out);
  value.collect(prefix + ".value", out);
  gates.collect(prefix + ".gates", out);
  output.collect(prefix + ".output", out);
}

template <typename T>
Vila<T>::Vila(std::size_t channels, std::array<std::size_t, 3> extent, std::size_t n_blocks, Rng& rng)
    : tokenizer(channels, extent[0] * extent[1] * extent[2], rng), extent_(extent) {
  for (std::size_t i = 0; i < n_blocks; ++i)
    blocks.emplace_back(channels, i % 2 == 0 ? Direction::forward : Direction::backward, rng);
}

template <typename T>
Tensor<T> Vila<T>::gate(const Tensor<T>& x) const {
  require(x.rank() == 5 && x.dim(2) == extent_[0] && x.dim(3) == extent_[1] && x.dim(4) == extent_[2],
          "vila_gate: input " + shape_str(x.shape()) + " does not match the configured grid");
  Tensor<T> t = tokenizer(x);
  for (const auto& blk : blocks) t = blk(t);
  return ops::softmax(detokenize(t, extent_), 1);
}

template <typename T>
Tensor<T> Vila<T>::operator()(const Tensor<T>& x) const {
  return ops::add(ops::mul(x, gate(x)), x);
}

template <typename T>
void Vila<T>::collect(const std::string& prefix, ParamList<T>& out) const {
  tokenizer.collect(prefix + ".tokenizer", out);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].collect(prefix + ".block" + std::to_string(i), out);
}

#define XHVED_INSTANTIATE(T)                                                           \
  template Tensor<T> flatten_tokens<T>(const Tensor<T>&);                              \
  template Tensor<T> detokenize<T>(const Tensor<T>&, std::array<std::size_t, 3>);      \
  template class Tokenizer<T>;                                                         \
  template class VilBlock<T>;                                                          \
  template class Vila<T>;

XHVED_INSTANTIATE(float)
XHVED_INSTANTIATE(double)

}  // namespace xhved::vila
