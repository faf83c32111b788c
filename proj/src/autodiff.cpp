#include "gkd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace gkd::ad {

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

namespace {
std::uint64_t next_seq() {
  thread_local std::uint64_t counter = 0;
  return ++counter;
}
}  // namespace

}  // namespace detail

using detail::Node;

namespace {

std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

[[noreturn]] void shape_fail(const char* op, const std::string& detail) {
  throw ShapeError(std::string(op) + ": " + detail);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    shape_fail(op, "shape mismatch " + shape_str(a.value()) + " vs " + shape_str(b.value()));
}

void require_index(const char* op, const IndexList& index, Index bound) {
  for (Index i : index)
    if (i < 0 || i >= bound)
      throw std::out_of_range(std::string(op) + ": index " + std::to_string(i) + " out of range [0, " +
                              std::to_string(bound) + ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->seq = detail::next_seq();
  return Tensor(std::move(n));
}

Tensor Tensor::parameter(Matrix value) {
  Tensor t = constant(std::move(value));
  t.node_->requires_grad = true;
  return t;
}

const Matrix& Tensor::value() const {
  if (!node_) throw std::logic_error("use of undefined tensor");
  return node_->value;
}

Matrix& Tensor::leaf_value() {
  if (!node_ || !node_->leaf) throw std::logic_error("leaf_value: not a leaf tensor");
  return node_->value;
}

Scalar Tensor::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("item: tensor is " + shape_str(v) + ", not a scalar");
  return v(0, 0);
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_ && node_->leaf; }
bool Tensor::has_grad() const { return node_ && node_->has_grad; }

Matrix Tensor::grad() const {
  if (node_ && node_->has_grad) return node_->grad;
  return Matrix::Zero(value().rows(), value().cols());
}

void Tensor::zero_grad() {
  if (!node_) return;
  node_->grad.resize(0, 0);
  node_->has_grad = false;
}

void Tensor::accumulate_grad(const Matrix& g) const {
  if (!node_ || !node_->requires_grad) return;
  if (g.rows() != node_->value.rows() || g.cols() != node_->value.cols())
    throw ShapeError(std::string(node_->op) + " backward: gradient " + shape_str(g) +
                     " does not match value " + shape_str(node_->value));
  if (node_->has_grad) {
    node_->grad += g;
  } else {
    node_->grad = g;
    node_->has_grad = true;
  }
}

Tensor Tensor::detach() const { return constant(value()); }

std::string_view Tensor::op() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::record(Matrix value, std::vector<Tensor> inputs, const char* op, BackwardFn backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->seq = detail::next_seq();
  n->op = op;
  n->leaf = false;
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (any) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.value().size() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.value()));
  Node* root = loss.node_.get();
  if (root->consumed) throw std::logic_error("backward: tape already consumed");
  if (!root->requires_grad) throw std::invalid_argument("backward: loss does not depend on any parameter");

  // Collect the recorded sub-graph. Owning pointers keep every node alive
  // until the release loop below has finished unlinking inputs.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::shared_ptr<Node>> stack{loss.node_};
  seen.insert(root);
  while (!stack.empty()) {
    std::shared_ptr<Node> n = std::move(stack.back());
    stack.pop_back();
    for (const Tensor& in : n->inputs) {
      Node* c = in.node_.get();
      if (c->requires_grad && seen.insert(c).second) stack.push_back(in.node_);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->seq > b->seq; });

  loss.accumulate_grad(Matrix::Ones(1, 1));
  for (const auto& n : order) {
    if (n->leaf || !n->has_grad || !n->backward) continue;
    n->backward(n->grad, n->inputs);
  }
  for (const auto& n : order) {
    if (n->leaf) continue;
    n->inputs.clear();
    n->backward = nullptr;
    n->consumed = true;
  }
}

// ---------------------------------------------------------------------------
// Operators

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows())
    shape_fail("matmul", "inner dimensions differ " + shape_str(a.value()) + " x " + shape_str(b.value()));
  Matrix out = a.value() * b.value();
  return Tensor::record(std::move(out), {a, b}, "matmul", [](const Matrix& g, const std::vector<Tensor>& in) {
    if (in[0].requires_grad()) in[0].accumulate_grad(g * in[1].value().transpose());
    if (in[1].requires_grad()) in[1].accumulate_grad(in[0].value().transpose() * g);
  });
}

namespace {

Tensor add_impl(const Tensor& a, const Tensor& b, Scalar sign, const char* op) {
  const bool broadcast = b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols();
  if (!broadcast) require_same_shape(op, a, b);
  Matrix out = a.value();
  if (broadcast) {
    out.rowwise() += sign * b.value().row(0);
  } else {
    out += sign * b.value();
  }
  return Tensor::record(std::move(out), {a, b}, op, [sign, broadcast](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(g);
    if (in[1].requires_grad()) {
      if (broadcast) {
        in[1].accumulate_grad(sign * g.colwise().sum());
      } else {
        in[1].accumulate_grad(sign * g);
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_impl(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_impl(a, b, -1.0, "sub"); }

Tensor mul_scalar(const Tensor& a, Scalar s) {
  return Tensor::record(a.value() * s, {a}, "mul_scalar",
                        [s](const Matrix& g, const std::vector<Tensor>& in) { in[0].accumulate_grad(g * s); });
}

Tensor add_scalar(const Tensor& a, Scalar s) {
  Matrix out = a.value().array() + s;
  return Tensor::record(std::move(out), {a}, "add_scalar",
                        [](const Matrix& g, const std::vector<Tensor>& in) { in[0].accumulate_grad(g); });
}

Tensor scale(const Tensor& a, const Tensor& s) {
  if (s.value().size() != 1) shape_fail("scale", "scale factor must be 1x1, got " + shape_str(s.value()));
  return Tensor::record(a.value() * s.item(), {a, s}, "scale", [](const Matrix& g, const std::vector<Tensor>& in) {
    if (in[0].requires_grad()) in[0].accumulate_grad(g * in[1].item());
    if (in[1].requires_grad()) in[1].accumulate_grad(Matrix::Constant(1, 1, (g.array() * in[0].value().array()).sum()));
  });
}

Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  require_same_shape("elementwise_mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  return Tensor::record(std::move(out), {a, b}, "elementwise_mul", [](const Matrix& g, const std::vector<Tensor>& in) {
    if (in[0].requires_grad()) in[0].accumulate_grad(g.cwiseProduct(in[1].value()));
    if (in[1].requires_grad()) in[1].accumulate_grad(g.cwiseProduct(in[0].value()));
  });
}

Tensor relu(const Tensor& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return Tensor::record(std::move(out), {a}, "relu", [](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(Matrix((in[0].value().array() > 0.0).select(g.array(), 0.0)));
  });
}

Tensor exp(const Tensor& a) {
  Matrix out = a.value().array().exp();
  Matrix y = out;
  return Tensor::record(std::move(out), {a}, "exp", [y = std::move(y)](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(g.cwiseProduct(y));
  });
}

Tensor log(const Tensor& a) {
  Matrix out = a.value().array().log();
  return Tensor::record(std::move(out), {a}, "log", [](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(g.cwiseQuotient(in[0].value()));
  });
}

Tensor softplus(const Tensor& a) {
  const auto& x = a.value().array();
  Matrix out = x.max(0.0) + (-x.abs()).exp().log1p();
  return Tensor::record(std::move(out), {a}, "softplus", [](const Matrix& g, const std::vector<Tensor>& in) {
    Matrix sig = in[0].value().unaryExpr([](Scalar v) {
      return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    });
    in[0].accumulate_grad(g.cwiseProduct(sig));
  });
}

Tensor pow_int(const Tensor& a, int exponent) {
  if (exponent < 1) shape_fail("pow_int", "exponent must be >= 1");
  Matrix out = a.value().unaryExpr([exponent](Scalar v) { return std::pow(v, exponent); });
  return Tensor::record(std::move(out), {a}, "pow_int", [exponent](const Matrix& g, const std::vector<Tensor>& in) {
    Matrix d = in[0].value().unaryExpr(
        [exponent](Scalar v) { return exponent * (exponent == 1 ? 1.0 : std::pow(v, exponent - 1)); });
    in[0].accumulate_grad(g.cwiseProduct(d));
  });
}

namespace {

// Max-subtracted log-sum-exp per row.
Vector row_logsumexp(const Matrix& x) {
  Vector out(x.rows());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    out(i) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return out;
}

}  // namespace

Tensor row_softmax(const Tensor& a) {
  if (a.cols() == 0) shape_fail("row_softmax", "empty rows");
  Matrix out = a.value();
  const Vector lse = row_logsumexp(out);
  out.colwise() -= lse;
  out = out.array().exp();
  Matrix s = out;
  return Tensor::record(std::move(out), {a}, "row_softmax", [s = std::move(s)](const Matrix& g, const std::vector<Tensor>& in) {
    const Vector dot = g.cwiseProduct(s).rowwise().sum();
    Matrix d = g;
    d.colwise() -= dot;
    in[0].accumulate_grad(d.cwiseProduct(s));
  });
}

Tensor row_log_softmax(const Tensor& a) {
  if (a.cols() == 0) shape_fail("row_log_softmax", "empty rows");
  Matrix out = a.value();
  out.colwise() -= row_logsumexp(out);
  Matrix s = out.array().exp();
  return Tensor::record(std::move(out), {a}, "row_log_softmax", [s = std::move(s)](const Matrix& g, const std::vector<Tensor>& in) {
    const Vector total = g.rowwise().sum();
    Matrix d = g;
    d.array() -= s.array().colwise() * total.array();
    in[0].accumulate_grad(d);
  });
}

Tensor row_l2_normalize(const Tensor& a, Scalar eps) {
  const Vector norms = a.value().rowwise().norm();
  const Vector denom = norms.cwiseMax(eps);
  Matrix out = a.value().array().colwise() / denom.array();
  Matrix y = out;
  return Tensor::record(std::move(out), {a}, "row_l2_normalize",
                        [y = std::move(y), norms, denom, eps](const Matrix& g, const std::vector<Tensor>& in) {
                          Matrix d(g.rows(), g.cols());
                          for (Index i = 0; i < g.rows(); ++i) {
                            if (norms(i) > eps) {
                              d.row(i) = (g.row(i) - y.row(i) * y.row(i).dot(g.row(i))) / denom(i);
                            } else {
                              d.row(i) = g.row(i) / denom(i);
                            }
                          }
                          in[0].accumulate_grad(d);
                        });
}

Tensor row_sum(const Tensor& a) {
  Matrix out = a.value().rowwise().sum();
  const Index cols = a.cols();
  return Tensor::record(std::move(out), {a}, "row_sum", [cols](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(g.replicate(1, cols));
  });
}

Tensor row_mean(const Tensor& a) {
  if (a.cols() == 0) shape_fail("row_mean", "empty rows");
  const Index cols = a.cols();
  Matrix out = a.value().rowwise().sum() / static_cast<Scalar>(cols);
  return Tensor::record(std::move(out), {a}, "row_mean", [cols](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(g.replicate(1, cols) / static_cast<Scalar>(cols));
  });
}

Tensor transpose(const Tensor& a) {
  Matrix out = a.value().transpose();
  return Tensor::record(std::move(out), {a}, "transpose", [](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(g.transpose());
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows())
    shape_fail("concat_cols", "row counts differ " + shape_str(a.value()) + " vs " + shape_str(b.value()));
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Index ca = a.cols();
  const Index cb = b.cols();
  return Tensor::record(std::move(out), {a, b}, "concat_cols", [ca, cb](const Matrix& g, const std::vector<Tensor>& in) {
    if (in[0].requires_grad()) in[0].accumulate_grad(g.leftCols(ca));
    if (in[1].requires_grad()) in[1].accumulate_grad(g.rightCols(cb));
  });
}

Tensor gather_rows(const Tensor& a, const IndexList& index) {
  require_index("gather_rows", index, a.rows());
  Matrix out(static_cast<Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) out.row(static_cast<Index>(i)) = a.value().row(index[i]);
  const Index rows = a.rows();
  return Tensor::record(std::move(out), {a}, "gather_rows", [index, rows](const Matrix& g, const std::vector<Tensor>& in) {
    Matrix d = Matrix::Zero(rows, g.cols());
    for (std::size_t i = 0; i < index.size(); ++i) d.row(index[i]) += g.row(static_cast<Index>(i));
    in[0].accumulate_grad(d);
  });
}

Tensor scatter_sum(const Tensor& a, const IndexList& index, Index out_rows) {
  if (static_cast<Index>(index.size()) != a.rows())
    shape_fail("scatter_sum", "index length " + std::to_string(index.size()) + " != rows " + std::to_string(a.rows()));
  require_index("scatter_sum", index, out_rows);
  Matrix out = Matrix::Zero(out_rows, a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) out.row(index[i]) += a.value().row(static_cast<Index>(i));
  return Tensor::record(std::move(out), {a}, "scatter_sum", [index](const Matrix& g, const std::vector<Tensor>& in) {
    Matrix d(static_cast<Index>(index.size()), g.cols());
    for (std::size_t i = 0; i < index.size(); ++i) d.row(static_cast<Index>(i)) = g.row(index[i]);
    in[0].accumulate_grad(d);
  });
}

Tensor scale_rows(const Tensor& a, const Vector& weights) {
  if (weights.size() != a.rows())
    shape_fail("scale_rows", "weight length " + std::to_string(weights.size()) + " != rows " + std::to_string(a.rows()));
  Matrix out = a.value().array().colwise() * weights.array();
  return Tensor::record(std::move(out), {a}, "scale_rows", [weights](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(g.array().colwise() * weights.array());
  });
}

Tensor segment_mean(const Tensor& a, const IndexList& segment_ids, Index num_segments) {
  if (static_cast<Index>(segment_ids.size()) != a.rows())
    shape_fail("segment_mean", "segment id length " + std::to_string(segment_ids.size()) + " != rows " +
                                   std::to_string(a.rows()));
  require_index("segment_mean", segment_ids, num_segments);
  Vector counts = Vector::Zero(num_segments);
  for (Index s : segment_ids) counts(s) += 1.0;
  Matrix out = Matrix::Zero(num_segments, a.cols());
  for (std::size_t i = 0; i < segment_ids.size(); ++i) out.row(segment_ids[i]) += a.value().row(static_cast<Index>(i));
  for (Index s = 0; s < num_segments; ++s)
    if (counts(s) > 0) out.row(s) /= counts(s);
  return Tensor::record(std::move(out), {a}, "segment_mean", [segment_ids, counts](const Matrix& g, const std::vector<Tensor>& in) {
    Matrix d(static_cast<Index>(segment_ids.size()), g.cols());
    for (std::size_t i = 0; i < segment_ids.size(); ++i)
      d.row(static_cast<Index>(i)) = g.row(segment_ids[i]) / counts(segment_ids[i]);
    in[0].accumulate_grad(d);
  });
}

Tensor batch_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps, BatchStats* stats) {
  const Index n = x.rows();
  const Index c = x.cols();
  if (n == 0) shape_fail("batch_norm_rows", "empty batch");
  if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
    shape_fail("batch_norm_rows", "affine parameters must be 1x" + std::to_string(c));
  const Eigen::RowVectorXd mean = x.value().colwise().mean();
  Matrix centered = x.value().rowwise() - mean;
  const Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  const Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().rowwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  if (stats) {
    stats->mean = mean;
    stats->variance = var;
  }
  return Tensor::record(std::move(out), {x, gamma, beta}, "batch_norm_rows",
                        [xhat = std::move(xhat), inv_std, n](const Matrix& g, const std::vector<Tensor>& in) {
                          if (in[1].requires_grad()) in[1].accumulate_grad(g.cwiseProduct(xhat).colwise().sum());
                          if (in[2].requires_grad()) in[2].accumulate_grad(g.colwise().sum());
                          if (in[0].requires_grad()) {
                            Matrix dxhat = g.array().rowwise() * in[1].value().row(0).array();
                            const Eigen::RowVectorXd sum_d = dxhat.colwise().sum();
                            const Eigen::RowVectorXd sum_dx = dxhat.cwiseProduct(xhat).colwise().sum();
                            Matrix dx = (dxhat * static_cast<Scalar>(n)).rowwise() - sum_d;
                            dx.array() -= xhat.array().rowwise() * sum_dx.array();
                            dx = dx.array().rowwise() * (inv_std.array() / static_cast<Scalar>(n));
                            in[0].accumulate_grad(dx);
                          }
                        });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  const Matrix diff = a.value() - b.value();
  const auto count = static_cast<Scalar>(diff.size());
  if (count == 0) shape_fail("mse", "empty operands");
  Matrix out = Matrix::Constant(1, 1, diff.squaredNorm() / count);
  return Tensor::record(std::move(out), {a, b}, "mse", [diff, count](const Matrix& g, const std::vector<Tensor>& in) {
    const Scalar s = 2.0 * g(0, 0) / count;
    if (in[0].requires_grad()) in[0].accumulate_grad(diff * s);
    if (in[1].requires_grad()) in[1].accumulate_grad(diff * -s);
  });
}

Tensor reduce_sum(const Tensor& a) {
  Matrix out = Matrix::Constant(1, 1, a.value().sum());
  const Index r = a.rows(), c = a.cols();
  return Tensor::record(std::move(out), {a}, "reduce_sum", [r, c](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(Matrix::Constant(r, c, g(0, 0)));
  });
}

Tensor reduce_mean(const Tensor& a) {
  const auto count = static_cast<Scalar>(a.value().size());
  if (count == 0) shape_fail("reduce_mean", "empty operand");
  Matrix out = Matrix::Constant(1, 1, a.value().sum() / count);
  const Index r = a.rows(), c = a.cols();
  return Tensor::record(std::move(out), {a}, "reduce_mean", [r, c, count](const Matrix& g, const std::vector<Tensor>& in) {
    in[0].accumulate_grad(Matrix::Constant(r, c, g(0, 0) / count));
  });
}

}  // namespace gkd::ad
