#pragma once

// Loss oracles computed straight from their definitions, one loop per term.

#include "gkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace gkd::testing {

using distill::GspMetric;
using distill::Kernel;
using distill::KernelKind;

// Scalar kernel evaluated directly from its definition.
inline double kernel_naive(Vector a, Vector b, const Kernel& k) {
  if (k.normalize_inputs || k.kind == KernelKind::cosine) {
    a /= std::max(a.norm(), 1e-12);
    b /= std::max(b.norm(), 1e-12);
  }
  switch (k.kind) {
    case KernelKind::euclidean: return (a - b).squaredNorm();
    case KernelKind::linear:
    case KernelKind::cosine: return a.dot(b);
    case KernelKind::polynomial: return std::pow(a.dot(b) + k.c, k.degree);
    case KernelKind::rbf: return std::exp(-(a - b).squaredNorm() / (2 * k.sigma));
  }
  return 0;
}

inline std::vector<double> softmax(const std::vector<double>& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double z = 0;
  for (double x : v) z += std::exp(x - m);
  std::vector<double> p;
  for (double x : v) p.push_back(std::exp(x - m) / z);
  return p;
}

inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

inline double lsp_naive(const Matrix& fs, const Matrix& ft, const std::vector<Edge>& edges, const Kernel& k) {
  double total = 0;
  int counted = 0;
  for (Index i = 0; i < fs.rows(); ++i) {
    std::vector<double> ks, kt;
    for (const Edge& e : edges)
      if (e.src == i) {
        ks.push_back(kernel_naive(fs.row(i).transpose(), fs.row(e.dst).transpose(), k));
        kt.push_back(kernel_naive(ft.row(i).transpose(), ft.row(e.dst).transpose(), k));
      }
    if (ks.size() < 2) continue;
    total += kl(softmax(ks), softmax(kt));
    ++counted;
  }
  return counted ? total / counted : 0.0;
}

inline double gsp_naive(const Matrix& fs, const Matrix& ft, const IndexList& subset, const Kernel& k, GspMetric metric) {
  const std::size_t m = subset.size();
  double total = 0;
  for (std::size_t a = 0; a < m; ++a) {
    std::vector<double> rs, rt;
    for (std::size_t b = 0; b < m; ++b) {
      rs.push_back(kernel_naive(fs.row(subset[a]).transpose(), fs.row(subset[b]).transpose(), k));
      rt.push_back(kernel_naive(ft.row(subset[a]).transpose(), ft.row(subset[b]).transpose(), k));
    }
    if (metric == GspMetric::mse) {
      for (std::size_t b = 0; b < m; ++b) total += (rs[b] - rt[b]) * (rs[b] - rt[b]);
    } else {
      total += kl(softmax(rs), softmax(rt));
    }
  }
  return metric == GspMetric::mse ? total / static_cast<double>(m * m) : total / static_cast<double>(m);
}

inline double at_naive(const Matrix& fs, const Matrix& ft) {
  const Index n = fs.rows();
  Vector as(n), at(n);
  for (Index i = 0; i < n; ++i) {
    as(i) = fs.row(i).squaredNorm();
    at(i) = ft.row(i).squaredNorm();
  }
  as /= as.norm();
  at /= at.norm();
  double s = 0;
  for (Index i = 0; i < n; ++i) s += (as(i) - at(i)) * (as(i) - at(i));
  return s;
}

}  // namespace gkd::testing
