#pragma once

#include <functional>
#include <span>
#include <vector>

#include "crossdiff/nn/parameters.hpp"
#include "crossdiff/nn/tensor.hpp"

namespace crossdiff::nn {

struct Var {
  int id = -1;
};

enum class Padding { Reflect, Valid };

/// Single-use reverse-mode tape.
///
/// Every op evaluates eagerly and, when any of its inputs (or a non-frozen
/// parameter) needs a gradient, records a closure that propagates the output
/// gradient back. Parameter gradients are accumulated straight into
/// Parameter::grad so a batch can be processed one sample per graph.
template <typename T>
class Graph {
 public:
  /// With enable_grad = false nothing is recorded (inference).
  explicit Graph(bool enable_grad = true) : enable_grad_(enable_grad) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor<T> value, bool requires_grad = false);
  Var constant(Tensor<T> value) { return input(std::move(value), false); }

  const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target w.r.t. v (empty if never reached).
  const Tensor<T>& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Seeds d(out)/d(out) = 1 for a 1x1x1 output and runs the tape backwards.
  void backward(Var out);

  // Layers with parameters. Weight layouts: conv {Cout, Cin, k, k} with
  // padding k/2, linear {Dout, Din}, norms {C}.
  Var conv2d(Var x, const Parameter<T>& weight, const Parameter<T>* bias, int stride = 1);
  Var linear(Var x, const Parameter<T>& weight, const Parameter<T>* bias);
  Var group_norm(Var x, int groups, const Parameter<T>& gamma, const Parameter<T>& beta, T eps = T(1e-5));

  // Pointwise.
  Var silu(Var x);
  Var relu(Var x);
  Var leaky_relu(Var x, T slope);
  Var sigmoid(Var x);
  Var abs(Var x);
  Var square(Var x);
  Var clip(Var x, T lo, T hi);
  Var add_scalar(Var x, T s);
  Var mul_scalar(Var x, T s);

  // Binary, identical shapes.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);

  // Broadcasts: v is C x 1 x 1 (per channel) or s is 1 x H x W (per pixel).
  Var add_channel(Var x, Var v);
  Var mul_channel(Var x, Var v);
  Var mul_pixel(Var x, Var s);

  // Shape ops.
  Var concat(Var a, Var b);
  Var slice_channel(Var x, int ch);
  Var upsample_nearest(Var x, int factor);
  Var global_avg_pool(Var x);
  Var channel_mean(Var x);

  /// Per-channel separable convolution with a fixed 1-D kernel. Reflect keeps
  /// the size; Valid drops radius pixels at every border.
  Var separable_filter(Var x, std::span<const T> kernel, Padding padding);

  // Reductions to 1 x 1 x 1.
  Var mean(Var x);
  Var sum(Var x);

  /// Universal image quality index on non-overlapping block x block windows of
  /// two single-channel maps; returns the 1 x by x bx map of block values.
  /// Windows with a zero denominator yield 0 and pass no gradient.
  Var q_index_blocks(Var a, Var b, int block);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void()> backward;
  };

  Var push(Tensor<T> value, bool needs_grad);
  Tensor<T>& grad_of(int id);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }

  std::vector<Node> nodes_;
  bool enable_grad_ = true;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace crossdiff::nn
