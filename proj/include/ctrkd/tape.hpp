#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ctrkd/rng.hpp"
#include "ctrkd/tensor.hpp"

namespace ctrkd {

enum class Elementwise { add, sub, mul, relu, sigmoid, square };

// Clamp applied to probabilities before any log in cross-entropy terms.
inline constexpr double kProbEpsilon = 1e-7;

double stable_sigmoid(double x);

// Records executed primitives so adjoints can be replayed in exact reverse
// order. A tape built with recording=false evaluates the same kernels but
// keeps no history, which is how inference and frozen teachers run.
//
// Only operations with at least one gradient-carrying input are recorded;
// their outputs carry gradients in turn.
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t num_ops() const { return nodes_.size(); }

  // a[m x k] * b[k x n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& a);

  // Equal shapes, or one side a single-element tensor.
  Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b);
  Tensor elementwise(Elementwise op, const Tensor& a);
  Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::add, a, b); }
  Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::sub, a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::mul, a, b); }
  Tensor relu(const Tensor& a) { return elementwise(Elementwise::relu, a); }
  Tensor sigmoid(const Tensor& a) { return elementwise(Elementwise::sigmoid, a); }
  Tensor square(const Tensor& a) { return elementwise(Elementwise::square, a); }
  Tensor scale(const Tensor& a, double factor);

  Tensor reduce_sum(const Tensor& a, std::size_t axis);
  Tensor sum(const Tensor& a);
  Tensor mean(const Tensor& a);

  // Inverted dropout: kept entries are scaled by 1/(1-rate) when training.
  Tensor dropout(const Tensor& a, double rate, bool training, Rng& rng);

  // a[..., n] + bias[n], bias repeated over leading axes.
  Tensor add_bias(const Tensor& a, const Tensor& bias);
  // a[B, n] * s[B]: row i scaled by s[i].
  Tensor scale_rows(const Tensor& a, const Tensor& s);
  // a[B, n] * w[n]: column j scaled by w[j].
  Tensor scale_cols(const Tensor& a, const Tensor& w);
  // Concatenate rank-2 tensors with equal row counts along axis 1.
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor reshape(const Tensor& a, Shape shape);

  // table[V, d] rows picked by index -> [n, d].
  Tensor gather_rows(const Tensor& table, std::span<const std::uint32_t> indices);

  // Hadamard products of every (h, f) map pair:
  // a[B, H, d], b[B, F, d] -> out[B, H*F, d], out[b, h*F + f, :] = a[b,h,:] o b[b,f,:].
  Tensor pairwise_hadamard(const Tensor& a, const Tensor& b);
  // Shared linear compression of feature maps: weight[H', K], z[B, K, d] -> [B, H', d].
  Tensor mix_maps(const Tensor& weight, const Tensor& z);

  // Row-wise softmax of a[B, M] with max subtraction.
  Tensor softmax_rows(const Tensor& a);

  // Mean binary cross-entropy -mean(t ln p + (1-t) ln(1-p)) with p clamped to
  // [eps, 1-eps]. Targets may be soft and may carry gradients.
  Tensor cross_entropy(const Tensor& probs, const Tensor& targets);

  // Replays adjoints from a scalar loss. Intermediate gradients are reset
  // first; leaf gradients accumulate across calls.
  void backward(const Tensor& loss);

 private:
  struct Node {
    Tensor output;
    std::function<void(std::span<const double>)> adjoint;
  };

  bool tracks(std::initializer_list<const Tensor*> inputs) const;
  void record(const Tensor& output, std::function<void(std::span<const double>)> adjoint);

  bool recording_;
  std::vector<Node> nodes_;
};

}  // namespace ctrkd
