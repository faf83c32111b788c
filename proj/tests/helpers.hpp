#pragma once

#include "gkd/autodiff.hpp"
#include "gkd/graph.hpp"
#include "gkd/random.hpp"

#include <unistd.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace gkd::testing {

inline Matrix random_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

inline Matrix random_matrix(Index rows, Index cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return random_matrix(rows, cols, rng, scale);
}

/// Both directions of every listed undirected pair.
inline std::vector<Edge> undirected(const std::vector<std::pair<Index, Index>>& pairs) {
  std::vector<Edge> out;
  for (auto [u, v] : pairs) {
    out.push_back({u, v});
    out.push_back({v, u});
  }
  return out;
}

inline EdgeIndex edge_index(Index n, const std::vector<Edge>& edges) {
  EdgeIndex ei;
  ei.num_nodes = n;
  for (const Edge& e : edges) {
    ei.src.push_back(e.src);
    ei.dst.push_back(e.dst);
  }
  return ei;
}

/// Random undirected graph on n nodes with each pair present with probability p.
inline std::vector<Edge> random_edges(Index n, double p, Rng& rng) {
  std::vector<std::pair<Index, Index>> pairs;
  for (Index u = 0; u < n; ++u)
    for (Index v = u + 1; v < n; ++v)
      if (uniform01(rng) < p) pairs.emplace_back(u, v);
  return undirected(pairs);
}

inline Graph node_graph(std::string id, Index n, const std::vector<Edge>& edges, Matrix x, int classes = 2) {
  std::vector<int> y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) y[static_cast<std::size_t>(i)] = static_cast<int>(i % classes);
  return Graph(std::move(id), n, edges, std::move(x), NodeLabels{y}, classes);
}

inline Batch single_batch(Index n, const std::vector<Edge>& edges, Matrix x) {
  return make_batch(std::vector<Graph>{node_graph("g", n, edges, std::move(x))});
}

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("gkd_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace gkd::testing
