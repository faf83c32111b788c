#pragma once

// Distillation objectives between a trainable student and a frozen teacher.
//
// All losses reduce by mean over nodes (or matrix entries), so the balancing
// weight beta does not scale with batch size. Teacher features are detached
// inside every loss; teacher projection heads remain trainable.

#include "gkd/autodiff.hpp"
#include "gkd/gnn.hpp"
#include "gkd/graph.hpp"
#include "gkd/random.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gkd::distill {

using ad::Tensor;

enum class KernelKind { euclidean, linear, polynomial, rbf, cosine };

std::string to_string(KernelKind k);
KernelKind parse_kernel(std::string_view s);

/// Pairwise similarity. `cosine` is the linear kernel on row-normalized
/// features; `normalize_inputs` row-normalizes before any other kind.
struct Kernel {
  KernelKind kind = KernelKind::rbf;
  double c = 1.0;
  int degree = 2;
  double sigma = 1.0;
  bool normalize_inputs = false;

  void validate() const;
};

/// n x n matrix of K(f_i, f_j):
///   euclidean  ||f_i - f_j||^2
///   linear     f_i . f_j
///   polynomial (f_i . f_j + c)^degree
///   rbf        exp(-||f_i - f_j||^2 / (2 sigma))
Tensor kernel_pairwise(const Tensor& f, const Kernel& kernel);
/// Kernel between matching rows: out[r] = K(a_r, b_r), an R x 1 column.
Tensor kernel_rowwise(const Tensor& a, const Tensor& b, const Kernel& kernel);

// ---------------------------------------------------------------------------
// Projection heads

enum class HeadKind { identity, linear, mlp, gcn };

std::string to_string(HeadKind k);
HeadKind parse_head(std::string_view s);

/// identity: F. linear: F W + b. mlp: relu(bn(F W + b)). gcn: relu(bn(A_hat F W + b)).
/// Batch norm uses batch statistics in train mode and running averages
/// (momentum 0.1, eps 1e-5) in eval mode; eval mode output is a constant.
class ProjectionHead {
 public:
  ProjectionHead() = default;
  ProjectionHead(HeadKind kind, Index in_dim, Index out_dim, Rng& rng);

  HeadKind kind() const { return kind_; }
  Index out_dim() const { return out_dim_; }
  Tensor project(const Tensor& f, const EdgeIndex& edges, bool train_mode = true);
  std::vector<Tensor> parameters() const;
  Index count_params() const;

  const Linear& transform() const { return transform_; }
  Linear& transform() { return transform_; }

 private:
  HeadKind kind_ = HeadKind::identity;
  Index in_dim_ = 0;
  Index out_dim_ = 0;
  Linear transform_;
  Tensor gamma_;
  Tensor beta_;
  Matrix running_mean_;
  Matrix running_var_;
  bool has_running_ = false;
};

// ---------------------------------------------------------------------------
// Losses. Each returns a 1x1 tensor.

/// Mean over rows of KL(softmax(z_t / tau) || softmax(z_s / tau)).
Tensor kd_loss(const Tensor& z_s, const Tensor& z_t, double tau);

/// Mean over nodes of ||normalize(P_S f_s) - normalize(P_T f_t)||^2.
Tensor fitnet_loss(const Tensor& f_s, const Tensor& f_t, ProjectionHead& p_s, ProjectionHead& p_t,
                   const EdgeIndex& edges);

/// Squared distance between the node-axis attention maps a_i = ||f_i||^2,
/// each l2-normalized over nodes.
Tensor at_loss(const Tensor& f_s, const Tensor& f_t);

/// Local structure: per node i with at least two out-neighbours, softmax of
/// K(f_i, f_j) over j in N(i) for both models; mean over those nodes of
/// KL(student || teacher), or KL(teacher || student) when `reverse`.
Tensor lsp_loss(const Tensor& f_s, const Tensor& f_t, const EdgeIndex& edges, const Kernel& kernel,
                bool reverse = false);

enum class GspMetric { mse, kl };
std::string to_string(GspMetric m);
GspMetric parse_gsp_metric(std::string_view s);

/// Global structure: full pairwise kernel matrices on a uniform node subset
/// of size min(n, cap) drawn with `seed`; mse averages over all n^2 entries,
/// kl averages the row-softmax KL over rows (same orientation rule as lsp).
Tensor gsp_loss(const Tensor& f_s, const Tensor& f_t, const Kernel& kernel, GspMetric metric, Index cap,
                std::uint64_t seed, bool reverse = false);

/// The node subset gsp_loss evaluates for a given n, cap and seed (sorted).
IndexList gsp_subsample(Index n, Index cap, std::uint64_t seed);

enum class ContrastLevel { node, node_samplewise, global };
std::string to_string(ContrastLevel c);
ContrastLevel parse_contrast_level(std::string_view s);

/// InfoNCE cross entropy of S / tau against the diagonal, S[i][j] the cosine
/// similarity of student row i and teacher row j after projection. Mean over
/// anchors. Node-samplewise restricts candidates to the anchor's own graph;
/// global mean-pools each graph first and contrasts graph vectors.
Tensor gcrd_loss(const Tensor& f_s, const Tensor& f_t, ProjectionHead& p_s, ProjectionHead& p_t, double tau,
                 const Batch& batch, ContrastLevel level = ContrastLevel::node);

/// Within-batch binary critic h = sigmoid(cos / tau):
/// -mean_i [log h(i,i) + sum_{j != i} log(1 - h(i,j)) / (n - 1)].
Tensor crd_loss(const Tensor& f_s, const Tensor& f_t, ProjectionHead& p_s, ProjectionHead& p_t, double tau,
                const EdgeIndex& edges);
/// The same critic at a chosen contrast level (see gcrd_loss).
Tensor crd_loss(const Tensor& f_s, const Tensor& f_t, ProjectionHead& p_s, ProjectionHead& p_t, double tau,
                const Batch& batch, ContrastLevel level);

/// Fraction of anchor rows whose highest-similarity teacher row is their own.
/// Rows are l2-normalized projections; `rows` selects the anchors and candidates.
double retrieval_accuracy(const Matrix& student_proj, const Matrix& teacher_proj, const IndexList& rows);

// ---------------------------------------------------------------------------
// Configuration

enum class AuxLoss { none, fitnet, at, lsp, gsp, crd, gcrd };
std::string to_string(AuxLoss a);

struct Method {
  bool kd = false;
  AuxLoss aux = AuxLoss::none;

  bool is_supervised() const { return !kd && aux == AuxLoss::none; }
  bool operator==(const Method&) const = default;
};

/// "supervised", "kd", "fitnet", "at", "lsp", "gsp", "crd", "gcrd", "kd+<aux>".
Method parse_method(std::string_view s);
std::string to_string(const Method& m);

struct DistillSpec {
  Method method;
  double alpha = 0.9;
  double beta = 1.0;
  double tau1 = 4.0;
  double tau2 = 0.075;
  Kernel kernel{KernelKind::rbf, 1.0, 2, 1.0, true};
  GspMetric gsp_metric = GspMetric::mse;
  Index gsp_cap = 512;
  HeadKind head = HeadKind::gcn;
  Index head_dim = 0;  // 0: student width
  ContrastLevel contrast_level = ContrastLevel::node;  // crd and gcrd
  bool lsp_kl_reverse = false;

  void validate() const;
};

/// (1 - alpha) sup + alpha tau1^2 kd + beta aux. alpha only applies when the
/// method includes kd; omitted terms (undefined tensors) contribute nothing.
Tensor combined_loss(const DistillSpec& spec, const Tensor& sup, const Tensor& kd, const Tensor& aux);

/// The auxiliary term of a method plus the projection heads it trains.
class Objective {
 public:
  Objective(const DistillSpec& spec, Index student_dim, Index teacher_dim, std::uint64_t seed);

  const DistillSpec& spec() const { return spec_; }
  std::vector<Tensor> parameters() const;
  Index count_params() const;
  ProjectionHead& student_head() { return head_s_; }
  ProjectionHead& teacher_head() { return head_t_; }

  /// Undefined tensor for methods without an auxiliary loss. `step_seed`
  /// drives gsp subsampling.
  Tensor aux_loss(const Tensor& f_s, const Tensor& f_t, const Batch& batch, std::uint64_t step_seed);

 private:
  DistillSpec spec_;
  ProjectionHead head_s_;
  ProjectionHead head_t_;
};

}  // namespace gkd::distill
