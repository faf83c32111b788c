#include "gkd/distill.hpp"

#include "gkd/log.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace gkd::distill {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

Tensor ones(Index rows, Index cols) { return Tensor::constant(Matrix::Ones(rows, cols)); }

Tensor scalar_zero() { return Tensor::scalar(0.0); }

}  // namespace

// ---------------------------------------------------------------------------
// Kernels

std::string to_string(KernelKind k) {
  switch (k) {
    case KernelKind::euclidean: return "euclidean";
    case KernelKind::linear: return "linear";
    case KernelKind::polynomial: return "polynomial";
    case KernelKind::rbf: return "rbf";
    case KernelKind::cosine: return "cosine";
  }
  return "?";
}

KernelKind parse_kernel(std::string_view s) {
  const std::string l = lower(s);
  if (l == "euclidean") return KernelKind::euclidean;
  if (l == "linear") return KernelKind::linear;
  if (l == "polynomial" || l == "poly") return KernelKind::polynomial;
  if (l == "rbf") return KernelKind::rbf;
  if (l == "cosine") return KernelKind::cosine;
  throw std::invalid_argument("unknown kernel '" + std::string(s) + "'");
}

void Kernel::validate() const {
  if (!(sigma > 0)) throw std::invalid_argument("kernel: sigma must be positive");
  if (degree < 1) throw std::invalid_argument("kernel: degree must be >= 1");
}

namespace {

Tensor prepare(const Tensor& f, const Kernel& k) {
  return (k.normalize_inputs || k.kind == KernelKind::cosine) ? ad::row_l2_normalize(f) : f;
}

Tensor pairwise_sq_dist(const Tensor& f) {
  const Index n = f.rows();
  Tensor sq = ad::row_sum(ad::elementwise_mul(f, f));  // n x 1
  Tensor rows = ad::matmul(sq, ones(1, n));
  Tensor cols = ad::matmul(ones(n, 1), ad::transpose(sq));
  Tensor gram = ad::matmul(f, ad::transpose(f));
  return ad::sub(ad::add(rows, cols), ad::mul_scalar(gram, 2.0));
}

}  // namespace

Tensor kernel_pairwise(const Tensor& f_in, const Kernel& kernel) {
  kernel.validate();
  if (f_in.rows() < 1) throw std::invalid_argument("kernel_pairwise: need at least one row");
  const Tensor f = prepare(f_in, kernel);
  switch (kernel.kind) {
    case KernelKind::euclidean: return pairwise_sq_dist(f);
    case KernelKind::linear:
    case KernelKind::cosine: return ad::matmul(f, ad::transpose(f));
    case KernelKind::polynomial:
      return ad::pow_int(ad::add_scalar(ad::matmul(f, ad::transpose(f)), kernel.c), kernel.degree);
    case KernelKind::rbf: return ad::exp(ad::mul_scalar(pairwise_sq_dist(f), -1.0 / (2.0 * kernel.sigma)));
  }
  throw std::logic_error("kernel_pairwise: unhandled kernel");
}

Tensor kernel_rowwise(const Tensor& a_in, const Tensor& b_in, const Kernel& kernel) {
  kernel.validate();
  const Tensor a = prepare(a_in, kernel);
  const Tensor b = prepare(b_in, kernel);
  auto sq_dist = [&] {
    Tensor d = ad::sub(a, b);
    return ad::row_sum(ad::elementwise_mul(d, d));
  };
  switch (kernel.kind) {
    case KernelKind::euclidean: return sq_dist();
    case KernelKind::linear:
    case KernelKind::cosine: return ad::row_sum(ad::elementwise_mul(a, b));
    case KernelKind::polynomial:
      return ad::pow_int(ad::add_scalar(ad::row_sum(ad::elementwise_mul(a, b)), kernel.c), kernel.degree);
    case KernelKind::rbf: return ad::exp(ad::mul_scalar(sq_dist(), -1.0 / (2.0 * kernel.sigma)));
  }
  throw std::logic_error("kernel_rowwise: unhandled kernel");
}

// ---------------------------------------------------------------------------
// Projection heads

std::string to_string(HeadKind k) {
  switch (k) {
    case HeadKind::identity: return "identity";
    case HeadKind::linear: return "linear";
    case HeadKind::mlp: return "mlp";
    case HeadKind::gcn: return "gcn";
  }
  return "?";
}

HeadKind parse_head(std::string_view s) {
  const std::string l = lower(s);
  if (l == "identity") return HeadKind::identity;
  if (l == "linear") return HeadKind::linear;
  if (l == "mlp") return HeadKind::mlp;
  if (l == "gcn") return HeadKind::gcn;
  throw std::invalid_argument("unknown projection head '" + std::string(s) + "'");
}

namespace {
constexpr double kBnMomentum = 0.1;
constexpr double kBnEps = 1e-5;
}  // namespace

ProjectionHead::ProjectionHead(HeadKind kind, Index in_dim, Index out_dim, Rng& rng)
    : kind_(kind), in_dim_(in_dim), out_dim_(kind == HeadKind::identity ? in_dim : out_dim) {
  if (kind_ == HeadKind::identity) return;
  transform_ = make_linear(in_dim_, out_dim_, true, rng);
  if (kind_ == HeadKind::mlp || kind_ == HeadKind::gcn) {
    gamma_ = Tensor::parameter(Matrix::Ones(1, out_dim_));
    beta_ = Tensor::parameter(Matrix::Zero(1, out_dim_));
    running_mean_ = Matrix::Zero(1, out_dim_);
    running_var_ = Matrix::Ones(1, out_dim_);
  }
}

Tensor ProjectionHead::project(const Tensor& f, const EdgeIndex& edges, bool train_mode) {
  if (f.cols() != in_dim_)
    throw ad::ShapeError("projection head: input width " + std::to_string(f.cols()) + " != " + std::to_string(in_dim_));
  switch (kind_) {
    case HeadKind::identity: return f;
    case HeadKind::linear: return apply(transform_, f);
    case HeadKind::mlp:
    case HeadKind::gcn: break;
  }
  Tensor z = kind_ == HeadKind::gcn ? gcn_layer(f, edges, transform_) : apply(transform_, f);
  if (train_mode) {
    ad::BatchStats stats;
    Tensor out = ad::relu(ad::batch_norm_rows(z, gamma_, beta_, kBnEps, &stats));
    const double n = static_cast<double>(z.rows());
    const Matrix unbiased = n > 1 ? Matrix(stats.variance * (n / (n - 1.0))) : stats.variance;
    running_mean_ = (1.0 - kBnMomentum) * running_mean_ + kBnMomentum * stats.mean;
    running_var_ = (1.0 - kBnMomentum) * running_var_ + kBnMomentum * unbiased;
    has_running_ = true;
    return out;
  }
  const Eigen::RowVectorXd inv_std = (running_var_.row(0).array() + kBnEps).rsqrt();
  Matrix y = z.value().rowwise() - running_mean_.row(0);
  y = y.array().rowwise() * (inv_std.array() * gamma_.value().row(0).array());
  y.rowwise() += beta_.value().row(0);
  return Tensor::constant(y.cwiseMax(0.0));
}

std::vector<Tensor> ProjectionHead::parameters() const {
  std::vector<Tensor> out;
  if (transform_.weight.defined()) out.push_back(transform_.weight);
  if (transform_.bias.defined()) out.push_back(transform_.bias);
  if (gamma_.defined()) out.push_back(gamma_);
  if (beta_.defined()) out.push_back(beta_);
  return out;
}

Index ProjectionHead::count_params() const {
  Index n = 0;
  for (const Tensor& t : parameters()) n += t.value().size();
  return n;
}

// ---------------------------------------------------------------------------
// Losses

Tensor kd_loss(const Tensor& z_s, const Tensor& z_t, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("kd_loss: temperature must be positive");
  if (z_s.rows() != z_t.rows() || z_s.cols() != z_t.cols()) throw ad::ShapeError("kd_loss: logit shapes differ");
  const Tensor log_p_t = ad::row_log_softmax(ad::mul_scalar(z_t.detach(), 1.0 / tau));
  const Tensor p_t = Tensor::constant(log_p_t.value().array().exp());
  const Tensor log_p_s = ad::row_log_softmax(ad::mul_scalar(z_s, 1.0 / tau));
  const Tensor kl = ad::reduce_sum(ad::elementwise_mul(p_t, ad::sub(log_p_t, log_p_s)));
  return ad::mul_scalar(kl, 1.0 / static_cast<double>(z_s.rows()));
}

Tensor fitnet_loss(const Tensor& f_s, const Tensor& f_t, ProjectionHead& p_s, ProjectionHead& p_t,
                   const EdgeIndex& edges) {
  if (f_s.rows() != f_t.rows()) throw ad::ShapeError("fitnet_loss: node counts differ");
  const Tensor u = ad::row_l2_normalize(p_s.project(f_s, edges));
  const Tensor v = ad::row_l2_normalize(p_t.project(f_t.detach(), edges));
  const Tensor d = ad::sub(u, v);
  return ad::mul_scalar(ad::reduce_sum(ad::elementwise_mul(d, d)), 1.0 / static_cast<double>(f_s.rows()));
}

Tensor at_loss(const Tensor& f_s, const Tensor& f_t) {
  if (f_s.rows() != f_t.rows()) throw ad::ShapeError("at_loss: node counts differ");
  auto attention = [](const Tensor& f) {
    return ad::row_l2_normalize(ad::transpose(ad::row_sum(ad::elementwise_mul(f, f))));  // 1 x n
  };
  const Tensor d = ad::sub(attention(f_s), attention(f_t.detach()));
  return ad::reduce_sum(ad::elementwise_mul(d, d));
}

namespace {

// Log-softmax of a column of values within segments; a detached per-segment
// maximum is subtracted first, which leaves values and gradients unchanged.
Tensor segment_log_softmax(const Tensor& values, const IndexList& seg, Index num_segments) {
  Vector seg_max = Vector::Constant(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < seg.size(); ++e)
    seg_max(seg[e]) = std::max(seg_max(seg[e]), values.value()(static_cast<Index>(e), 0));
  Matrix shift(static_cast<Index>(seg.size()), 1);
  for (std::size_t e = 0; e < seg.size(); ++e) shift(static_cast<Index>(e), 0) = seg_max(seg[e]);
  const Tensor shifted = ad::sub(values, Tensor::constant(std::move(shift)));
  const Tensor lse = ad::log(ad::scatter_sum(ad::exp(shifted), seg, num_segments));
  return ad::sub(shifted, ad::gather_rows(lse, seg));
}

// KL(p || q) summed over entries, from log-probabilities.
Tensor kl_sum(const Tensor& log_p, const Tensor& log_q) {
  return ad::reduce_sum(ad::elementwise_mul(ad::exp(log_p), ad::sub(log_p, log_q)));
}

}  // namespace

Tensor lsp_loss(const Tensor& f_s, const Tensor& f_t, const EdgeIndex& edges, const Kernel& kernel, bool reverse) {
  if (f_s.rows() != f_t.rows() || f_s.rows() != edges.num_nodes)
    throw ad::ShapeError("lsp_loss: feature rows must match the node count");
  if (edges.num_edges() == 0) {
    log::warn("lsp_loss: empty edge set, loss is 0");
    return scalar_zero();
  }
  const IndexList out_deg = edges.out_degree();
  IndexList segment_of(static_cast<std::size_t>(edges.num_nodes), -1);
  Index num_segments = 0;
  for (Index i = 0; i < edges.num_nodes; ++i)
    if (out_deg[static_cast<std::size_t>(i)] >= 2) segment_of[static_cast<std::size_t>(i)] = num_segments++;
  if (num_segments == 0) return scalar_zero();

  IndexList src, dst, seg;
  for (Index e = 0; e < edges.num_edges(); ++e) {
    const auto k = static_cast<std::size_t>(e);
    const Index s = segment_of[static_cast<std::size_t>(edges.src[k])];
    if (s < 0) continue;
    src.push_back(edges.src[k]);
    dst.push_back(edges.dst[k]);
    seg.push_back(s);
  }
  const Tensor t = f_t.detach();
  const Tensor log_p_s =
      segment_log_softmax(kernel_rowwise(ad::gather_rows(f_s, src), ad::gather_rows(f_s, dst), kernel), seg, num_segments);
  const Tensor log_p_t =
      segment_log_softmax(kernel_rowwise(ad::gather_rows(t, src), ad::gather_rows(t, dst), kernel), seg, num_segments);
  const Tensor total = reverse ? kl_sum(log_p_t, log_p_s) : kl_sum(log_p_s, log_p_t);
  return ad::mul_scalar(total, 1.0 / static_cast<double>(num_segments));
}

std::string to_string(GspMetric m) { return m == GspMetric::mse ? "mse" : "kl"; }

GspMetric parse_gsp_metric(std::string_view s) {
  const std::string l = lower(s);
  if (l == "mse") return GspMetric::mse;
  if (l == "kl") return GspMetric::kl;
  throw std::invalid_argument("unknown gsp metric '" + std::string(s) + "'");
}

IndexList gsp_subsample(Index n, Index cap, std::uint64_t seed) {
  if (cap < 2) throw std::invalid_argument("gsp: cap must be >= 2");
  IndexList idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  if (n <= cap) return idx;
  Rng rng = make_rng(seed, "gsp/subsample");
  // Partial Fisher-Yates: first `cap` slots become a uniform subset.
  for (Index i = 0; i < cap; ++i) {
    const auto j = i + static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(n - i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(cap));
  std::sort(idx.begin(), idx.end());
  return idx;
}

Tensor gsp_loss(const Tensor& f_s, const Tensor& f_t, const Kernel& kernel, GspMetric metric, Index cap,
                std::uint64_t seed, bool reverse) {
  if (cap < 2) throw std::invalid_argument("gsp_loss: cap must be >= 2");
  if (f_s.rows() != f_t.rows()) throw ad::ShapeError("gsp_loss: node counts differ");
  const Index n = f_s.rows();
  Tensor s = f_s;
  Tensor t = f_t.detach();
  if (n > cap) {
    const IndexList subset = gsp_subsample(n, cap, seed);
    s = ad::gather_rows(s, subset);
    t = ad::gather_rows(t, subset);
  }
  const Tensor k_s = kernel_pairwise(s, kernel);
  const Tensor k_t = kernel_pairwise(t, kernel);
  if (metric == GspMetric::mse) return ad::mse(k_s, k_t);
  const Tensor log_s = ad::row_log_softmax(k_s);
  const Tensor log_t = ad::row_log_softmax(k_t);
  const Tensor total = reverse ? kl_sum(log_t, log_s) : kl_sum(log_s, log_t);
  return ad::mul_scalar(total, 1.0 / static_cast<double>(s.rows()));
}

std::string to_string(ContrastLevel c) {
  switch (c) {
    case ContrastLevel::node: return "node";
    case ContrastLevel::node_samplewise: return "node-samplewise";
    case ContrastLevel::global: return "global";
  }
  return "?";
}

ContrastLevel parse_contrast_level(std::string_view s) {
  const std::string l = lower(s);
  if (l == "node") return ContrastLevel::node;
  if (l == "node-samplewise" || l == "samplewise") return ContrastLevel::node_samplewise;
  if (l == "global") return ContrastLevel::global;
  throw std::invalid_argument("unknown contrast level '" + std::string(s) + "'");
}

namespace {

// Sum over anchors of -log softmax(logits)[i][i].
Tensor infonce_sum(const Tensor& logits) {
  const Index n = logits.rows();
  return ad::mul_scalar(
      ad::reduce_sum(ad::elementwise_mul(ad::row_log_softmax(logits), Tensor::constant(Matrix::Identity(n, n)))),
      -1.0);
}

Tensor cosine_logits(const Tensor& u, const Tensor& v, double tau) {
  return ad::mul_scalar(ad::matmul(u, ad::transpose(v)), 1.0 / tau);
}

// Sum over anchors of the binary critic terms:
// softplus(-s_ii) + sum_{j != i} softplus(s_ij) / (n - 1).
Tensor critic_sum(const Tensor& logits) {
  const Index n = logits.rows();
  // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x).
  Matrix sign = Matrix::Ones(n, n);
  sign.diagonal().setConstant(-1.0);
  Matrix weight = Matrix::Constant(n, n, 1.0 / static_cast<double>(n - 1));
  weight.diagonal().setOnes();
  const Tensor terms = ad::softplus(ad::elementwise_mul(logits, Tensor::constant(std::move(sign))));
  return ad::reduce_sum(ad::elementwise_mul(terms, Tensor::constant(std::move(weight))));
}

using BlockLoss = Tensor (*)(const Tensor&);

// Projects both sides at the requested granularity and averages `block`
// (a per-anchor sum) over anchors.
Tensor contrast(const char* who, const Tensor& f_s, const Tensor& f_t, ProjectionHead& p_s, ProjectionHead& p_t,
                double tau, const Batch& batch, ContrastLevel level, BlockLoss block) {
  if (!(tau > 0)) throw std::invalid_argument(std::string(who) + ": temperature must be positive");
  if (f_s.rows() != f_t.rows() || f_s.rows() != batch.num_nodes())
    throw ad::ShapeError(std::string(who) + ": feature rows must match the batch node count");

  if (level == ContrastLevel::global) {
    if (batch.num_graphs() < 2)
      throw std::invalid_argument(std::string(who) + ": global contrast needs at least 2 graphs");
    EdgeIndex isolated;
    isolated.num_nodes = batch.num_graphs();
    const Tensor g_s = ad::segment_mean(f_s, batch.node_to_graph, batch.num_graphs());
    const Tensor g_t = ad::segment_mean(f_t.detach(), batch.node_to_graph, batch.num_graphs());
    const Tensor u = ad::row_l2_normalize(p_s.project(g_s, isolated));
    const Tensor v = ad::row_l2_normalize(p_t.project(g_t, isolated));
    return ad::mul_scalar(block(cosine_logits(u, v, tau)), 1.0 / static_cast<double>(batch.num_graphs()));
  }

  const Index n = f_s.rows();
  if (n < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 nodes for negatives");
  const Tensor u = ad::row_l2_normalize(p_s.project(f_s, batch.edges));
  const Tensor v = ad::row_l2_normalize(p_t.project(f_t.detach(), batch.edges));
  if (level == ContrastLevel::node || batch.num_graphs() == 1)
    return ad::mul_scalar(block(cosine_logits(u, v, tau)), 1.0 / static_cast<double>(n));

  Tensor total;
  for (Index g = 0; g < batch.num_graphs(); ++g) {
    const Index size = batch.graph_size(g);
    if (size < 2) continue;  // a lone node has no candidates besides itself: zero loss
    IndexList rows(static_cast<std::size_t>(size));
    std::iota(rows.begin(), rows.end(), batch.offsets[static_cast<std::size_t>(g)]);
    Tensor part = block(cosine_logits(ad::gather_rows(u, rows), ad::gather_rows(v, rows), tau));
    total = total.defined() ? ad::add(total, part) : part;
  }
  if (!total.defined()) return scalar_zero();
  return ad::mul_scalar(total, 1.0 / static_cast<double>(n));
}

Batch single_graph(const EdgeIndex& edges) {
  Batch b;
  b.graph_ids = {"batch"};
  b.offsets = {0};
  b.node_to_graph.assign(static_cast<std::size_t>(edges.num_nodes), 0);
  b.edges = edges;
  b.features = Matrix::Zero(edges.num_nodes, 0);
  return b;
}

}  // namespace

Tensor gcrd_loss(const Tensor& f_s, const Tensor& f_t, ProjectionHead& p_s, ProjectionHead& p_t, double tau,
                 const Batch& batch, ContrastLevel level) {
  return contrast("gcrd_loss", f_s, f_t, p_s, p_t, tau, batch, level, &infonce_sum);
}

Tensor crd_loss(const Tensor& f_s, const Tensor& f_t, ProjectionHead& p_s, ProjectionHead& p_t, double tau,
                const Batch& batch, ContrastLevel level) {
  return contrast("crd_loss", f_s, f_t, p_s, p_t, tau, batch, level, &critic_sum);
}

Tensor crd_loss(const Tensor& f_s, const Tensor& f_t, ProjectionHead& p_s, ProjectionHead& p_t, double tau,
                const EdgeIndex& edges) {
  if (f_s.rows() != edges.num_nodes) throw ad::ShapeError("crd_loss: feature rows must match the node count");
  return crd_loss(f_s, f_t, p_s, p_t, tau, single_graph(edges), ContrastLevel::node);
}

double retrieval_accuracy(const Matrix& student_proj, const Matrix& teacher_proj, const IndexList& rows) {
  if (rows.empty()) return 0.0;
  Matrix u(static_cast<Index>(rows.size()), student_proj.cols());
  Matrix v(static_cast<Index>(rows.size()), teacher_proj.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    u.row(static_cast<Index>(i)) = student_proj.row(rows[i]);
    v.row(static_cast<Index>(i)) = teacher_proj.row(rows[i]);
  }
  const Matrix sim = u * v.transpose();
  Index hits = 0;
  for (Index i = 0; i < sim.rows(); ++i) {
    Index best = 0;
    sim.row(i).maxCoeff(&best);
    if (best == i) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(AuxLoss a) {
  switch (a) {
    case AuxLoss::none: return "none";
    case AuxLoss::fitnet: return "fitnet";
    case AuxLoss::at: return "at";
    case AuxLoss::lsp: return "lsp";
    case AuxLoss::gsp: return "gsp";
    case AuxLoss::crd: return "crd";
    case AuxLoss::gcrd: return "gcrd";
  }
  return "?";
}

namespace {
AuxLoss parse_aux(std::string_view s) {
  const std::string l = lower(s);
  if (l == "fitnet") return AuxLoss::fitnet;
  if (l == "at") return AuxLoss::at;
  if (l == "lsp") return AuxLoss::lsp;
  if (l == "gsp") return AuxLoss::gsp;
  if (l == "crd") return AuxLoss::crd;
  if (l == "gcrd" || l == "g-crd") return AuxLoss::gcrd;
  throw std::invalid_argument("unknown distillation method '" + std::string(s) + "'");
}
}  // namespace

Method parse_method(std::string_view s) {
  const std::string l = lower(s);
  if (l == "supervised") return {};
  if (l == "kd") return {true, AuxLoss::none};
  if (l.rfind("kd+", 0) == 0) return {true, parse_aux(std::string_view(l).substr(3))};
  return {false, parse_aux(l)};
}

std::string to_string(const Method& m) {
  if (m.is_supervised()) return "supervised";
  if (m.aux == AuxLoss::none) return "kd";
  return (m.kd ? "kd+" : "") + to_string(m.aux);
}

void DistillSpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("distill: alpha must lie in [0, 1]");
  if (!(beta >= 0.0)) throw std::invalid_argument("distill: beta must be non-negative");
  if (!(tau1 > 0.0)) throw std::invalid_argument("distill: tau1 must be positive");
  if (!(tau2 > 0.0)) throw std::invalid_argument("distill: tau2 must be positive");
  if (gsp_cap < 2) throw std::invalid_argument("distill: gsp_cap must be >= 2");
  if (head_dim < 0) throw std::invalid_argument("distill: head_dim must be non-negative");
  kernel.validate();
}

Tensor combined_loss(const DistillSpec& spec, const Tensor& sup, const Tensor& kd, const Tensor& aux) {
  const double alpha = spec.method.kd ? spec.alpha : 0.0;
  Tensor total = ad::mul_scalar(sup, 1.0 - alpha);
  if (spec.method.kd && kd.defined())
    total = ad::add(total, ad::mul_scalar(kd, alpha * spec.tau1 * spec.tau1));
  if (spec.method.aux != AuxLoss::none && aux.defined()) total = ad::add(total, ad::mul_scalar(aux, spec.beta));
  return total;
}

Objective::Objective(const DistillSpec& spec, Index student_dim, Index teacher_dim, std::uint64_t seed)
    : spec_(spec) {
  spec_.validate();
  const AuxLoss aux = spec_.method.aux;
  if (aux == AuxLoss::fitnet || aux == AuxLoss::crd || aux == AuxLoss::gcrd) {
    const Index dim = spec_.head_dim > 0 ? spec_.head_dim : student_dim;
    Rng rng = make_rng(seed, "heads");
    head_s_ = ProjectionHead(spec_.head, student_dim, dim, rng);
    head_t_ = ProjectionHead(spec_.head, teacher_dim, dim, rng);
    if (head_s_.out_dim() != head_t_.out_dim())
      throw std::invalid_argument("distill: identity heads need equal student and teacher widths");
  }
}

std::vector<Tensor> Objective::parameters() const {
  std::vector<Tensor> out = head_s_.parameters();
  const auto t = head_t_.parameters();
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

Index Objective::count_params() const { return head_s_.count_params() + head_t_.count_params(); }

Tensor Objective::aux_loss(const Tensor& f_s, const Tensor& f_t, const Batch& batch, std::uint64_t step_seed) {
  switch (spec_.method.aux) {
    case AuxLoss::none: return {};
    case AuxLoss::fitnet: return fitnet_loss(f_s, f_t, head_s_, head_t_, batch.edges);
    case AuxLoss::at: return at_loss(f_s, f_t);
    case AuxLoss::lsp: return lsp_loss(f_s, f_t, batch.edges, spec_.kernel, spec_.lsp_kl_reverse);
    case AuxLoss::gsp:
      return gsp_loss(f_s, f_t, spec_.kernel, spec_.gsp_metric, spec_.gsp_cap, step_seed, spec_.lsp_kl_reverse);
    case AuxLoss::crd: return crd_loss(f_s, f_t, head_s_, head_t_, spec_.tau2, batch, spec_.contrast_level);
    case AuxLoss::gcrd: return gcrd_loss(f_s, f_t, head_s_, head_t_, spec_.tau2, batch, spec_.contrast_level);
  }
  return {};
}

}  // namespace gkd::distill
