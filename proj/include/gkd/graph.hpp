#pragma once

#include "gkd/core.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace gkd {

/// Raised by the graph text reader; the message carries the offending line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct Edge {
  Index src = 0;
  Index dst = 0;
  auto operator<=>(const Edge&) const = default;
};

/// Directed incidence lists over a node set. Messages flow src -> dst.
struct EdgeIndex {
  Index num_nodes = 0;
  IndexList src;
  IndexList dst;

  Index num_edges() const { return static_cast<Index>(src.size()); }
  IndexList in_degree() const;
  IndexList out_degree() const;
};

enum class LabelKind { node, graph };

struct NodeLabels {
  std::vector<int> values;
};

/// A graph-level target: a class index, or a real value for regression data.
struct GraphLabel {
  double value = 0.0;
};

using LabelPayload = std::variant<NodeLabels, GraphLabel>;

class Graph {
 public:
  /// Validates every structural invariant; throws std::invalid_argument otherwise.
  Graph(std::string id, Index num_nodes, std::vector<Edge> edges, Matrix features,
        LabelPayload labels, int num_classes);

  const std::string& id() const { return id_; }
  Index num_nodes() const { return num_nodes_; }
  Index feature_dim() const { return features_.cols(); }
  const std::vector<Edge>& edges() const { return edges_; }
  const Matrix& features() const { return features_; }
  const LabelPayload& labels() const { return labels_; }
  LabelKind label_kind() const;
  int num_classes() const { return num_classes_; }

  const std::vector<int>& node_labels() const;
  double graph_label() const;

  EdgeIndex edge_index() const;

 private:
  std::string id_;
  Index num_nodes_;
  std::vector<Edge> edges_;
  Matrix features_;
  LabelPayload labels_;
  int num_classes_;
};

/// Disjoint union of graphs. Node v of member g has global index offsets[g] + v.
struct Batch {
  std::vector<std::string> graph_ids;
  IndexList offsets;
  IndexList node_to_graph;
  EdgeIndex edges;
  Matrix features;
  LabelKind label_kind = LabelKind::node;
  std::vector<int> node_labels;
  std::vector<double> graph_labels;
  int num_classes = 0;

  Index num_nodes() const { return features.rows(); }
  Index num_graphs() const { return static_cast<Index>(graph_ids.size()); }
  Index feature_dim() const { return features.cols(); }
  Index graph_size(Index g) const;
};

Batch make_batch(const std::vector<Graph>& graphs);
Batch make_batch(const std::vector<const Graph*>& graphs);

// ---------------------------------------------------------------------------
// File formats

Graph load_graph(const std::filesystem::path& path);
void save_graph(const Graph& graph, const std::filesystem::path& path);
std::string format_graph(const Graph& graph);
Graph parse_graph(const std::string& text, const std::string& source = "<memory>");

/// Manifest: one graph file path per line, relative paths resolved against
/// the manifest's directory. Blank lines and '#' comments are skipped.
std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path);
std::vector<Graph> load_dataset(const std::filesystem::path& manifest);
void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::filesystem::path>& entries);

// ---------------------------------------------------------------------------
// Splits

enum class SplitMode { random, planted_shift };

struct SplitSpec {
  double train = 0.6;
  double valid = 0.2;
  double test = 0.2;
  std::uint64_t seed = 0;
  SplitMode mode = SplitMode::random;

  void validate() const;
};

struct Split {
  IndexList train;
  IndexList valid;
  IndexList test;
};

/// Partitions [0, count). In planted-shift mode items are ordered by
/// `shift_scores` (ties broken by the seeded shuffle) so the test part holds
/// the highest scores, emulating an out-of-distribution split.
Split make_split(Index count, const SplitSpec& spec, const std::vector<double>& shift_scores = {});

SplitMode parse_split_mode(const std::string& name);
std::string to_string(SplitMode mode);

// ---------------------------------------------------------------------------
// Synthetic generators. None of these reproduce any published dataset.

struct SbmParams {
  int blocks = 5;
  int nodes_per_block = 120;
  double p_in = 0.06;
  double p_out = 0.005;
  int d_in = 16;
  double noise = 1.0;
  std::uint64_t seed = 0;
};

/// Stochastic block model. Node label = block id; features are a one-hot block
/// signal (block mod d_in) plus Gaussian noise of scale `noise`.
Graph synth_sbm(const SbmParams& params);

struct MolParams {
  int count = 100;
  int min_n = 10;
  int max_n = 30;
  int num_classes = 2;
  std::uint64_t seed = 0;
};

inline constexpr int kMolFeatureDim = 8;

/// Random connected tree-like graphs with planted triangles. The graph label
/// is min(#triangles, num_classes - 1), a pure function of the structure.
std::vector<Graph> synth_molgraphs(const MolParams& params);

/// Number of 3-cycles in the undirected view of `graph`.
Index count_triangles(const Graph& graph);

}  // namespace gkd
