#include "gkd/graph.hpp"

#include "gkd/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace gkd {

IndexList EdgeIndex::in_degree() const {
  IndexList deg(static_cast<std::size_t>(num_nodes), 0);
  for (Index d : dst) ++deg[static_cast<std::size_t>(d)];
  return deg;
}

IndexList EdgeIndex::out_degree() const {
  IndexList deg(static_cast<std::size_t>(num_nodes), 0);
  for (Index s : src) ++deg[static_cast<std::size_t>(s)];
  return deg;
}

Graph::Graph(std::string id, Index num_nodes, std::vector<Edge> edges, Matrix features,
             LabelPayload labels, int num_classes)
    : id_(std::move(id)),
      num_nodes_(num_nodes),
      edges_(std::move(edges)),
      features_(std::move(features)),
      labels_(std::move(labels)),
      num_classes_(num_classes) {
  if (num_nodes_ <= 0) throw std::invalid_argument("graph '" + id_ + "': node count must be positive");
  if (features_.rows() != num_nodes_)
    throw std::invalid_argument("graph '" + id_ + "': feature row count mismatch");
  if (num_classes_ < 0) throw std::invalid_argument("graph '" + id_ + "': negative class count");
  std::set<Edge> seen;
  for (const Edge& e : edges_) {
    if (e.src < 0 || e.src >= num_nodes_ || e.dst < 0 || e.dst >= num_nodes_)
      throw std::invalid_argument("graph '" + id_ + "': edge endpoint out of range");
    if (!seen.insert(e).second)
      throw std::invalid_argument("graph '" + id_ + "': duplicate edge " + std::to_string(e.src) +
                                  " " + std::to_string(e.dst));
  }
  if (const auto* nl = std::get_if<NodeLabels>(&labels_)) {
    if (static_cast<Index>(nl->values.size()) != num_nodes_)
      throw std::invalid_argument("graph '" + id_ + "': node label count mismatch");
    for (int y : nl->values)
      if (y < 0 || (num_classes_ > 0 && y >= num_classes_))
        throw std::invalid_argument("graph '" + id_ + "': node label out of range");
  }
}

LabelKind Graph::label_kind() const {
  return std::holds_alternative<NodeLabels>(labels_) ? LabelKind::node : LabelKind::graph;
}

const std::vector<int>& Graph::node_labels() const {
  if (const auto* nl = std::get_if<NodeLabels>(&labels_)) return nl->values;
  throw std::logic_error("graph '" + id_ + "' carries a graph label, not node labels");
}

double Graph::graph_label() const {
  if (const auto* gl = std::get_if<GraphLabel>(&labels_)) return gl->value;
  throw std::logic_error("graph '" + id_ + "' carries node labels, not a graph label");
}

EdgeIndex Graph::edge_index() const {
  EdgeIndex ei;
  ei.num_nodes = num_nodes_;
  ei.src.reserve(edges_.size());
  ei.dst.reserve(edges_.size());
  for (const Edge& e : edges_) {
    ei.src.push_back(e.src);
    ei.dst.push_back(e.dst);
  }
  return ei;
}

Index Batch::graph_size(Index g) const {
  const auto gi = static_cast<std::size_t>(g);
  const Index end = gi + 1 < offsets.size() ? offsets[gi + 1] : num_nodes();
  return end - offsets[gi];
}

Batch make_batch(const std::vector<const Graph*>& graphs) {
  if (graphs.empty()) throw std::invalid_argument("empty batch");
  const Graph& first = *graphs.front();
  Batch batch;
  batch.label_kind = first.label_kind();
  batch.num_classes = first.num_classes();

  Index total = 0;
  for (const Graph* g : graphs) {
    if (g->feature_dim() != first.feature_dim())
      throw std::invalid_argument("make_batch: mixed feature widths (" +
                                  std::to_string(first.feature_dim()) + " vs " +
                                  std::to_string(g->feature_dim()) + ")");
    if (g->label_kind() != batch.label_kind)
      throw std::invalid_argument("make_batch: mixed label kinds");
    batch.num_classes = std::max(batch.num_classes, g->num_classes());
    total += g->num_nodes();
  }

  batch.features.resize(total, first.feature_dim());
  batch.edges.num_nodes = total;
  batch.node_to_graph.reserve(static_cast<std::size_t>(total));
  Index offset = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const Graph& g = *graphs[gi];
    batch.graph_ids.push_back(g.id());
    batch.offsets.push_back(offset);
    batch.features.middleRows(offset, g.num_nodes()) = g.features();
    for (Index v = 0; v < g.num_nodes(); ++v) batch.node_to_graph.push_back(static_cast<Index>(gi));
    for (const Edge& e : g.edges()) {
      batch.edges.src.push_back(offset + e.src);
      batch.edges.dst.push_back(offset + e.dst);
    }
    if (batch.label_kind == LabelKind::node) {
      const auto& y = g.node_labels();
      batch.node_labels.insert(batch.node_labels.end(), y.begin(), y.end());
    } else {
      batch.graph_labels.push_back(g.graph_label());
    }
    offset += g.num_nodes();
  }
  return batch;
}

Batch make_batch(const std::vector<Graph>& graphs) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const Graph& g : graphs) ptrs.push_back(&g);
  return make_batch(ptrs);
}

// ---------------------------------------------------------------------------
// Text format

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

bool parse_double(const std::string& tok, double& out) {
  const char* b = tok.data();
  const char* e = b + tok.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_int64(const std::string& tok, long long& out) {
  const char* b = tok.data();
  const char* e = b + tok.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

struct LineReader {
  std::istringstream in;
  std::string source;
  std::size_t lineno = 0;

  // Skips blank lines; returns false at EOF.
  bool next(std::string& line) {
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") != std::string::npos) return true;
    }
    return false;
  }
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(source, lineno, what); }
};

}  // namespace

std::string format_graph(const Graph& graph) {
  std::ostringstream out;
  const bool node = graph.label_kind() == LabelKind::node;
  out << "#graph " << graph.id() << " nodes=" << graph.num_nodes() << " dim=" << graph.feature_dim()
      << " labels=" << (node ? "node" : "graph") << " classes=" << graph.num_classes() << "\n";
  for (Index i = 0; i < graph.num_nodes(); ++i) {
    for (Index j = 0; j < graph.feature_dim(); ++j) {
      if (j) out << ' ';
      out << format_real(graph.features()(i, j));
    }
    out << "\n";
  }
  if (node) {
    for (int y : graph.node_labels()) out << y << "\n";
  } else {
    out << format_real(graph.graph_label()) << "\n";
  }
  out << "#edges\n";
  for (const Edge& e : graph.edges()) out << e.src << ' ' << e.dst << "\n";
  return out.str();
}

Graph parse_graph(const std::string& text, const std::string& source) {
  LineReader r{std::istringstream(text), source};
  std::string line;
  if (!r.next(line)) r.fail("malformed header: empty file");

  auto head = split_ws(line);
  if (head.size() != 6 || head[0] != "#graph") r.fail("malformed header");
  std::string id = head[1];
  long long n = -1, dim = -1, classes = -1;
  std::string kind;
  for (std::size_t k = 2; k < head.size(); ++k) {
    const auto eq = head[k].find('=');
    if (eq == std::string::npos) r.fail("malformed header: expected key=value, got '" + head[k] + "'");
    const std::string key = head[k].substr(0, eq);
    const std::string val = head[k].substr(eq + 1);
    if (key == "labels") {
      kind = val;
      continue;
    }
    long long v = 0;
    if (!parse_int64(val, v)) r.fail("malformed header: bad integer for '" + key + "'");
    if (key == "nodes") n = v;
    else if (key == "dim") dim = v;
    else if (key == "classes") classes = v;
    else r.fail("malformed header: unknown key '" + key + "'");
  }
  if (n <= 0 || dim < 0 || classes < 0 || (kind != "node" && kind != "graph"))
    r.fail("malformed header");

  Matrix x(n, dim);
  for (long long i = 0; i < n; ++i) {
    if (!r.next(line) || line.rfind("#edges", 0) == 0) r.fail("feature row count mismatch");
    auto toks = split_ws(line);
    if (static_cast<long long>(toks.size()) != dim) {
      // A single integer where a feature row was expected means rows ran out.
      r.fail(toks.size() == 1 && dim != 1 ? "feature row count mismatch"
                                          : "feature width mismatch: expected " +
                                                std::to_string(dim) + " values");
    }
    for (long long j = 0; j < dim; ++j)
      if (!parse_double(toks[static_cast<std::size_t>(j)], x(i, j))) r.fail("bad real '" + toks[j] + "'");
  }

  LabelPayload labels;
  if (kind == "node") {
    NodeLabels nl;
    for (long long i = 0; i < n; ++i) {
      if (!r.next(line) || line.rfind("#edges", 0) == 0) r.fail("node label count mismatch");
      auto toks = split_ws(line);
      long long y = 0;
      if (toks.size() != 1 || !parse_int64(toks[0], y)) r.fail("bad node label");
      if (y < 0 || (classes > 0 && y >= classes)) r.fail("node label out of range");
      nl.values.push_back(static_cast<int>(y));
    }
    labels = std::move(nl);
  } else {
    if (!r.next(line)) r.fail("missing graph label");
    auto toks = split_ws(line);
    double y = 0;
    if (toks.size() != 1 || !parse_double(toks[0], y)) r.fail("bad graph label");
    labels = GraphLabel{y};
  }

  if (!r.next(line) || split_ws(line) != std::vector<std::string>{"#edges"})
    r.fail("expected '#edges' section (feature row count mismatch?)");

  std::vector<Edge> edges;
  std::set<Edge> seen;
  while (r.next(line)) {
    auto toks = split_ws(line);
    long long s = 0, d = 0;
    if (toks.size() != 2 || !parse_int64(toks[0], s) || !parse_int64(toks[1], d))
      r.fail("malformed edge line");
    if (s < 0 || s >= n || d < 0 || d >= n) r.fail("edge endpoint out of range");
    Edge e{s, d};
    if (!seen.insert(e).second) r.fail("duplicate edge");
    edges.push_back(e);
  }
  return Graph(std::move(id), n, std::move(edges), std::move(x), std::move(labels),
               static_cast<int>(classes));
}

Graph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open graph file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_graph(ss.str(), path.string());
}

void save_graph(const Graph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write graph file " + path.string());
  out << format_graph(graph);
}

std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  std::vector<std::filesystem::path> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t");
    std::filesystem::path p = line.substr(b, e - b + 1);
    if (p.is_relative()) p = path.parent_path() / p;
    out.push_back(p);
  }
  return out;
}

std::vector<Graph> load_dataset(const std::filesystem::path& manifest) {
  std::vector<Graph> graphs;
  for (const auto& p : read_manifest(manifest)) graphs.push_back(load_graph(p));
  if (graphs.empty()) throw std::runtime_error("manifest " + manifest.string() + " lists no graphs");
  return graphs;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::filesystem::path>& entries) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write manifest " + path.string());
  for (const auto& e : entries) out << e.generic_string() << "\n";
}

// ---------------------------------------------------------------------------
// Splits

void SplitSpec::validate() const {
  if (!(train > 0 && valid > 0 && test > 0))
    throw std::invalid_argument("split fractions must be positive");
  if (std::abs(train + valid + test - 1.0) > 1e-9)
    throw std::invalid_argument("split fractions must sum to 1");
}

SplitMode parse_split_mode(const std::string& name) {
  if (name == "random") return SplitMode::random;
  if (name == "planted-shift") return SplitMode::planted_shift;
  throw std::invalid_argument("unknown split mode '" + name + "'");
}

std::string to_string(SplitMode mode) {
  return mode == SplitMode::random ? "random" : "planted-shift";
}

Split make_split(Index count, const SplitSpec& spec, const std::vector<double>& shift_scores) {
  spec.validate();
  if (count < 3) throw std::invalid_argument("make_split: need at least 3 items");
  IndexList order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(spec.seed, "split");
  shuffle(order.begin(), order.end(), rng);
  if (spec.mode == SplitMode::planted_shift) {
    if (static_cast<Index>(shift_scores.size()) != count)
      throw std::invalid_argument("planted-shift split needs one score per item");
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return shift_scores[static_cast<std::size_t>(a)] < shift_scores[static_cast<std::size_t>(b)];
    });
  }
  auto n_train = static_cast<Index>(std::llround(spec.train * static_cast<double>(count)));
  auto n_valid = static_cast<Index>(std::llround(spec.valid * static_cast<double>(count)));
  n_train = std::clamp<Index>(n_train, 1, count - 2);
  n_valid = std::clamp<Index>(n_valid, 1, count - n_train - 1);

  Split s;
  s.train.assign(order.begin(), order.begin() + n_train);
  s.valid.assign(order.begin() + n_train, order.begin() + n_train + n_valid);
  s.test.assign(order.begin() + n_train + n_valid, order.end());
  if (spec.mode == SplitMode::random) {
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.valid.begin(), s.valid.end());
    std::sort(s.test.begin(), s.test.end());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Generators

Graph synth_sbm(const SbmParams& p) {
  if (p.blocks <= 0 || p.nodes_per_block <= 0 || p.d_in <= 0)
    throw std::invalid_argument("synth_sbm: blocks, nodes_per_block and d_in must be positive");
  if (!(p.p_in >= 0 && p.p_in <= 1 && p.p_out >= 0 && p.p_out <= 1))
    throw std::invalid_argument("synth_sbm: probabilities must lie in [0, 1]");
  if (!(p.p_in > p.p_out))
    throw std::invalid_argument("synth_sbm: requires p_in > p_out (homophilous regime)");
  if (p.noise < 0) throw std::invalid_argument("synth_sbm: noise must be non-negative");

  const Index n = static_cast<Index>(p.blocks) * p.nodes_per_block;
  auto block_of = [&](Index v) { return static_cast<int>(v / p.nodes_per_block); };

  Rng edge_rng = make_rng(p.seed, "sbm/edges");
  std::vector<Edge> edges;
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double prob = block_of(i) == block_of(j) ? p.p_in : p.p_out;
      if (uniform01(edge_rng) < prob) {
        edges.push_back({i, j});
        edges.push_back({j, i});
      }
    }
  }

  Rng feat_rng = make_rng(p.seed, "sbm/features");
  Matrix x(n, p.d_in);
  NodeLabels labels;
  for (Index v = 0; v < n; ++v) {
    const int b = block_of(v);
    labels.values.push_back(b);
    for (Index j = 0; j < p.d_in; ++j) {
      const double signal = (j == b % p.d_in) ? 1.0 : 0.0;
      x(v, j) = signal + (p.noise > 0 ? p.noise * standard_normal(feat_rng) : 0.0);
    }
  }
  return Graph("sbm", n, std::move(edges), std::move(x), std::move(labels), p.blocks);
}

Index count_triangles(const Graph& graph) {
  const auto n = static_cast<std::size_t>(graph.num_nodes());
  std::vector<std::set<Index>> nbr(n);
  for (const Edge& e : graph.edges()) {
    if (e.src == e.dst) continue;
    nbr[static_cast<std::size_t>(e.src)].insert(e.dst);
    nbr[static_cast<std::size_t>(e.dst)].insert(e.src);
  }
  Index count = 0;
  for (std::size_t u = 0; u < n; ++u)
    for (Index v : nbr[u])
      if (v > static_cast<Index>(u))
        for (Index w : nbr[static_cast<std::size_t>(v)])
          if (w > v && nbr[u].count(w)) ++count;
  return count;
}

std::vector<Graph> synth_molgraphs(const MolParams& p) {
  if (p.min_n < 2 || p.min_n > p.max_n)
    throw std::invalid_argument("synth_molgraphs: requires 2 <= min_n <= max_n");
  if (p.count < 0) throw std::invalid_argument("synth_molgraphs: count must be non-negative");
  if (p.num_classes < 2) throw std::invalid_argument("synth_molgraphs: need at least 2 classes");

  std::vector<Graph> out;
  out.reserve(static_cast<std::size_t>(p.count));
  for (int g = 0; g < p.count; ++g) {
    Rng rng = make_rng(derive_seed(p.seed, "mol/" + std::to_string(g)), "graph");
    const Index n = p.min_n + static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(p.max_n - p.min_n + 1)));

    // Random recursive tree: connected and acyclic.
    std::vector<std::set<Index>> nbr(static_cast<std::size_t>(n));
    for (Index v = 1; v < n; ++v) {
      const auto parent = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(v)));
      nbr[static_cast<std::size_t>(v)].insert(parent);
      nbr[static_cast<std::size_t>(parent)].insert(v);
    }

    // Plant k triangles by closing wedges u - c - w.
    const auto k = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(p.num_classes)));
    for (int t = 0; t < k; ++t) {
      for (int attempt = 0; attempt < 32; ++attempt) {
        const auto c = static_cast<std::size_t>(uniform_index(rng, static_cast<std::uint64_t>(n)));
        if (nbr[c].size() < 2) continue;
        std::vector<Index> around(nbr[c].begin(), nbr[c].end());
        const Index u = around[uniform_index(rng, around.size())];
        const Index w = around[uniform_index(rng, around.size())];
        if (u == w || nbr[static_cast<std::size_t>(u)].count(w)) continue;
        nbr[static_cast<std::size_t>(u)].insert(w);
        nbr[static_cast<std::size_t>(w)].insert(u);
        break;
      }
    }

    std::vector<Edge> edges;
    for (Index u = 0; u < n; ++u)
      for (Index v : nbr[static_cast<std::size_t>(u)]) edges.push_back({u, v});

    Matrix x = Matrix::Zero(n, kMolFeatureDim);
    for (Index u = 0; u < n; ++u) {
      const auto deg = static_cast<Index>(nbr[static_cast<std::size_t>(u)].size());
      x(u, std::min<Index>(deg, kMolFeatureDim - 1)) = 1.0;
    }

    Graph tmp("mol" + std::to_string(g), n, edges, x, GraphLabel{0.0}, p.num_classes);
    const Index tri = count_triangles(tmp);
    const double label = static_cast<double>(std::min<Index>(tri, p.num_classes - 1));
    out.emplace_back("mol" + std::to_string(g), n, std::move(edges), std::move(x), GraphLabel{label},
                     p.num_classes);
  }
  return out;
}

}  // namespace gkd
