#pragma once

// Representational similarity between two embedding spaces: linear CKA and
// Mantel correlations of pairwise cosine distances.

#include "gkd/core.hpp"
#include "gkd/gnn.hpp"
#include "gkd/graph.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gkd::simrep {

struct EmbeddingSet {
  Matrix features;       // n x d
  IndexList node_ids;    // aligns rows across sets
  std::string source;

  Index size() const { return features.rows(); }
  void validate() const;
};

class AnalysisError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Linear CKA of two row-aligned matrices:
/// ||Y^T X||_F^2 / (||X^T X||_F ||Y^T Y||_F) after column centering.
template <class DX, class DY>
double cka(const Eigen::MatrixBase<DX>& x_in, const Eigen::MatrixBase<DY>& y_in) {
  using M = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;
  if (x_in.rows() != y_in.rows()) throw AnalysisError("cka: row counts differ");
  if (x_in.rows() < 3) throw AnalysisError("cka: need at least 3 rows");
  const M x = x_in.template cast<double>().rowwise() - x_in.template cast<double>().colwise().mean();
  const M y = y_in.template cast<double>().rowwise() - y_in.template cast<double>().colwise().mean();
  if (x.squaredNorm() == 0.0 || y.squaredNorm() == 0.0) return 0.0;
  const double cross = (y.transpose() * x).squaredNorm();
  const double xx = (x.transpose() * x).norm();
  const double yy = (y.transpose() * y).norm();
  return cross / (xx * yy);
}

/// Pearson correlation; throws when either vector is constant.
double pearson(const std::vector<double>& a, const std::vector<double>& b);

namespace detail {

template <class D>
Eigen::VectorXd row_norms(const Eigen::MatrixBase<D>& f) {
  return f.template cast<double>().rowwise().norm();
}

template <class D>
double cosine_distance(const Eigen::MatrixBase<D>& f, const Eigen::VectorXd& norms, Index i, Index j) {
  const double dot = f.row(i).template cast<double>().dot(f.row(j).template cast<double>());
  return 1.0 - dot / (norms(i) * norms(j));
}

void warn_zero_rows(const char* who, Index skipped);

template <class DX, class DY>
double mantel_pairs(const char* who, const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y,
                    const std::vector<std::pair<Index, Index>>& pairs) {
  const Eigen::VectorXd nx = row_norms(x);
  const Eigen::VectorXd ny = row_norms(y);
  std::vector<double> a, b;
  a.reserve(pairs.size());
  b.reserve(pairs.size());
  Index skipped = 0;
  for (const auto& [i, j] : pairs) {
    if (nx(i) == 0.0 || nx(j) == 0.0 || ny(i) == 0.0 || ny(j) == 0.0) {
      ++skipped;
      continue;
    }
    a.push_back(cosine_distance(x, nx, i, j));
    b.push_back(cosine_distance(y, ny, i, j));
  }
  if (skipped > 0) warn_zero_rows(who, skipped);
  if (a.size() < 3) throw AnalysisError(std::string(who) + ": fewer than 3 usable pairs");
  return pearson(a, b);
}

}  // namespace detail

/// Pearson correlation of cosine distances over the strict upper triangle.
template <class DX, class DY>
double mantel_global(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
  if (x.rows() != y.rows()) throw AnalysisError("mantel_global: row counts differ");
  if (x.rows() < 3) throw AnalysisError("mantel_global: need at least 3 rows");
  std::vector<std::pair<Index, Index>> pairs;
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = i + 1; j < x.rows(); ++j) pairs.emplace_back(i, j);
  return detail::mantel_pairs("mantel_global", x, y, pairs);
}

/// Unique unordered pairs {i, j}, i != j, from a directed edge list.
std::vector<std::pair<Index, Index>> undirected_pairs(const EdgeIndex& edges);

/// As mantel_global, restricted to the undirected edge set (each edge once).
template <class DX, class DY>
double mantel_local(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y, const EdgeIndex& edges) {
  if (x.rows() != y.rows() || x.rows() != edges.num_nodes)
    throw AnalysisError("mantel_local: row counts must match the node count");
  return detail::mantel_pairs("mantel_local", x, y, undirected_pairs(edges));
}

double cka(const EmbeddingSet& a, const EmbeddingSet& b);
double mantel_global(const EmbeddingSet& a, const EmbeddingSet& b);
/// `edges` indexes rows of the sets.
double mantel_local(const EmbeddingSet& a, const EmbeddingSet& b, const EdgeIndex& edges);

// ---------------------------------------------------------------------------
// Reports

struct SimilarityRow {
  std::string name;
  double cka = 0;
  double mantel_global = 0;
  double mantel_local = 0;
};

/// Penultimate embeddings of `model` on the rows of `batch` selected by `rows`
/// (all rows when empty).
EmbeddingSet extract_embeddings(const Model& model, const Batch& batch, const IndexList& rows, std::string source);

/// Edges of `edges` with both endpoints in `rows`, renumbered to positions in `rows`.
EdgeIndex induced_edges(const EdgeIndex& edges, const IndexList& rows);

/// One row per student, each compared against the teacher on the same rows.
std::vector<SimilarityRow> similarity_report(const Model& teacher, const std::vector<std::pair<std::string, Model>>& students,
                                             const Batch& batch, const IndexList& rows);
std::vector<SimilarityRow> similarity_report(const EmbeddingSet& teacher, const std::vector<EmbeddingSet>& students,
                                             const EdgeIndex& edges);

void write_report_csv(std::ostream& out, const std::vector<SimilarityRow>& rows);

// ---------------------------------------------------------------------------
// Embedding files: header "n d", then n rows "node_id v_1 ... v_d".

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet read_embeddings(const std::filesystem::path& path);

/// Plain edge list, one "u v" pair of node ids per line; '#' starts a comment.
/// Endpoints are mapped to row positions through `node_ids`.
EdgeIndex read_edge_list(const std::filesystem::path& path, const IndexList& node_ids);

}  // namespace gkd::simrep
