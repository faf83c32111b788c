#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major matrices.
//
// Every value is a 2-D matrix; scalars are 1x1. An operation records itself
// (inputs plus a backward rule) only when at least one input requires a
// gradient. Nodes carry a creation sequence number, so the sub-graph reachable
// from a loss, ordered by sequence, is the tape: inputs always precede
// outputs. backward() walks it once in reverse and then releases it.

#include "gkd/core.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gkd::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct Node;
}

class Tensor;

/// Backward rule: given d(loss)/d(output), accumulate into the inputs' grads.
/// `inputs` are the recorded input tensors, in call order.
using BackwardFn = std::function<void(const Matrix& grad_out, const std::vector<Tensor>& inputs)>;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix value);
  static Tensor parameter(Matrix value);
  static Tensor scalar(Scalar v) { return constant(Matrix::Constant(1, 1, v)); }

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  /// Mutable access for leaves only (optimizer updates, finite differences).
  Matrix& leaf_value();
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient of the last backward pass; zeros when none has reached this node.
  Matrix grad() const;
  void zero_grad();
  /// Adds `g` to this node's gradient slot (used by backward rules).
  void accumulate_grad(const Matrix& g) const;

  /// Same value, cut from the graph.
  Tensor detach() const;

  std::string_view op() const;

  /// Records an operation. Exposed so tests and extensions can add ops with
  /// their own backward rules.
  static Tensor record(Matrix value, std::vector<Tensor> inputs, const char* op, BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend void backward(const Tensor& loss);
};

/// Populates grads of every requires_grad leaf reachable from `loss` (a 1x1
/// tensor), then releases the recorded graph.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Operators. Shape errors and out-of-range indices throw, naming the op.

Tensor matmul(const Tensor& a, const Tensor& b);
/// a + b for equal shapes, or b a 1 x cols(a) row broadcast over rows of a.
Tensor add(const Tensor& a, const Tensor& b);
/// a - b, same broadcasting rule as add.
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul_scalar(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar s);
/// a scaled by a 1x1 tensor.
Tensor scale(const Tensor& a, const Tensor& s);
Tensor elementwise_mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
/// log(1 + e^x), evaluated stably.
Tensor softplus(const Tensor& a);
Tensor pow_int(const Tensor& a, int exponent);

Tensor row_softmax(const Tensor& a);
Tensor row_log_softmax(const Tensor& a);
/// Each row divided by max(||row||, eps).
Tensor row_l2_normalize(const Tensor& a, Scalar eps = 1e-12);
Tensor row_sum(const Tensor& a);
Tensor row_mean(const Tensor& a);
Tensor transpose(const Tensor& a);
Tensor concat_cols(const Tensor& a, const Tensor& b);

Tensor gather_rows(const Tensor& a, const IndexList& index);
/// out[index[i]] += a[i]; out has out_rows rows.
Tensor scatter_sum(const Tensor& a, const IndexList& index, Index out_rows);
/// Row i scaled by the constant weights[i].
Tensor scale_rows(const Tensor& a, const Vector& weights);
/// Mean of rows sharing a segment id; empty segments yield zero rows.
Tensor segment_mean(const Tensor& a, const IndexList& segment_ids, Index num_segments);

struct BatchStats {
  Matrix mean;      // 1 x c
  Matrix variance;  // 1 x c, biased
};
/// Column-wise normalization with batch statistics, then gamma * xhat + beta.
/// `stats`, when given, receives the batch mean and biased variance.
Tensor batch_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = 1e-5,
                       BatchStats* stats = nullptr);

/// Mean over all entries of (a - b)^2.
Tensor mse(const Tensor& a, const Tensor& b);
Tensor reduce_mean(const Tensor& a);
Tensor reduce_sum(const Tensor& a);

}  // namespace gkd::ad
