#include "gkd/simrep.hpp"

#include "gkd/log.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

namespace gkd::simrep {

void EmbeddingSet::validate() const {
  if (static_cast<Index>(node_ids.size()) != features.rows())
    throw AnalysisError("embedding set '" + source + "': id count does not match row count");
  if (!features.allFinite()) throw AnalysisError("embedding set '" + source + "': non-finite entries");
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw AnalysisError("pearson: length mismatch");
  if (a.size() < 2) throw AnalysisError("pearson: need at least 2 values");
  const auto n = static_cast<Index>(a.size());
  const Eigen::Map<const Eigen::VectorXd> x(a.data(), n);
  const Eigen::Map<const Eigen::VectorXd> y(b.data(), n);
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double sx = xc.norm();
  const double sy = yc.norm();
  // Anything below rounding noise of the mean counts as constant.
  auto constant = [n](double s, const Eigen::VectorXd& v) {
    return s <= 1e-14 * std::sqrt(static_cast<double>(n)) * std::max(1.0, v.cwiseAbs().maxCoeff());
  };
  if (constant(sx, x) || constant(sy, y)) throw AnalysisError("pearson: constant distance vector, correlation undefined");
  return std::clamp(xc.dot(yc) / (sx * sy), -1.0, 1.0);
}

namespace detail {
void warn_zero_rows(const char* who, Index skipped) {
  log::warn(std::string(who) + ": skipped " + std::to_string(skipped) + " pair(s) involving zero-norm rows");
}
}  // namespace detail

std::vector<std::pair<Index, Index>> undirected_pairs(const EdgeIndex& edges) {
  std::set<std::pair<Index, Index>> unique;
  for (Index e = 0; e < edges.num_edges(); ++e) {
    const Index u = edges.src[static_cast<std::size_t>(e)];
    const Index v = edges.dst[static_cast<std::size_t>(e)];
    if (u != v) unique.emplace(std::min(u, v), std::max(u, v));
  }
  return {unique.begin(), unique.end()};
}

namespace {

void check_aligned(const EmbeddingSet& a, const EmbeddingSet& b) {
  a.validate();
  b.validate();
  if (a.node_ids != b.node_ids)
    throw AnalysisError("embedding sets '" + a.source + "' and '" + b.source + "' are not aligned by node id");
}

}  // namespace

double cka(const EmbeddingSet& a, const EmbeddingSet& b) {
  check_aligned(a, b);
  return cka(a.features, b.features);
}

double mantel_global(const EmbeddingSet& a, const EmbeddingSet& b) {
  check_aligned(a, b);
  return mantel_global(a.features, b.features);
}

double mantel_local(const EmbeddingSet& a, const EmbeddingSet& b, const EdgeIndex& edges) {
  check_aligned(a, b);
  return mantel_local(a.features, b.features, edges);
}

EmbeddingSet extract_embeddings(const Model& model, const Batch& batch, const IndexList& rows, std::string source) {
  if (model.spec().in_dim != batch.features.cols())
    throw AnalysisError("model '" + source + "' expects input width " + std::to_string(model.spec().in_dim) +
                        " but the data has " + std::to_string(batch.features.cols()));
  const Matrix all = forward(model.frozen(), batch, false).embeddings.value();
  EmbeddingSet out;
  out.source = std::move(source);
  if (rows.empty()) {
    out.features = all;
    out.node_ids.resize(static_cast<std::size_t>(all.rows()));
    std::iota(out.node_ids.begin(), out.node_ids.end(), Index{0});
    return out;
  }
  out.features.resize(static_cast<Index>(rows.size()), all.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.features.row(static_cast<Index>(i)) = all.row(rows[i]);
  out.node_ids = rows;
  return out;
}

EdgeIndex induced_edges(const EdgeIndex& edges, const IndexList& rows) {
  std::unordered_map<Index, Index> position;
  for (std::size_t i = 0; i < rows.size(); ++i) position.emplace(rows[i], static_cast<Index>(i));
  EdgeIndex out;
  out.num_nodes = static_cast<Index>(rows.size());
  for (Index e = 0; e < edges.num_edges(); ++e) {
    const auto s = position.find(edges.src[static_cast<std::size_t>(e)]);
    const auto d = position.find(edges.dst[static_cast<std::size_t>(e)]);
    if (s == position.end() || d == position.end()) continue;
    out.src.push_back(s->second);
    out.dst.push_back(d->second);
  }
  return out;
}

std::vector<SimilarityRow> similarity_report(const EmbeddingSet& teacher, const std::vector<EmbeddingSet>& students,
                                             const EdgeIndex& edges) {
  std::vector<SimilarityRow> out;
  for (const EmbeddingSet& s : students) {
    SimilarityRow row;
    row.name = s.source;
    row.cka = cka(teacher, s);
    row.mantel_global = mantel_global(teacher, s);
    row.mantel_local = mantel_local(teacher, s, edges);
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<SimilarityRow> similarity_report(const Model& teacher,
                                             const std::vector<std::pair<std::string, Model>>& students,
                                             const Batch& batch, const IndexList& rows) {
  const EmbeddingSet t = extract_embeddings(teacher, batch, rows, "teacher");
  std::vector<EmbeddingSet> sets;
  for (const auto& [name, model] : students) sets.push_back(extract_embeddings(model, batch, rows, name));
  const EdgeIndex edges = rows.empty() ? batch.edges : induced_edges(batch.edges, rows);
  return similarity_report(t, sets, edges);
}

void write_report_csv(std::ostream& out, const std::vector<SimilarityRow>& rows) {
  out << "student,cka,mantel_global,mantel_local\n";
  for (const SimilarityRow& r : rows)
    out << r.name << ',' << format_real(r.cka) << ',' << format_real(r.mantel_global) << ','
        << format_real(r.mantel_local) << '\n';
}

// ---------------------------------------------------------------------------
// Files

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  set.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << set.features.rows() << ' ' << set.features.cols() << '\n';
  for (Index i = 0; i < set.features.rows(); ++i) {
    out << set.node_ids[static_cast<std::size_t>(i)];
    for (Index j = 0; j < set.features.cols(); ++j) out << ' ' << format_real(set.features(i, j));
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

namespace {

template <class T>
T parse_number(const std::string& token, const std::string& path, std::size_t line) {
  T value{};
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ParseError(path, line, "bad number '" + token + "'");
  return value;
}

// Next non-blank, non-comment line split on whitespace; false at end of file.
bool next_tokens(std::istream& in, std::size_t& lineno, std::vector<std::string>& tokens) {
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    tokens.clear();
    for (std::string t; ss >> t;) tokens.push_back(t);
    if (!tokens.empty()) return true;
  }
  return false;
}

}  // namespace

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string name = path.string();
  std::size_t lineno = 0;
  std::vector<std::string> tok;
  if (!next_tokens(in, lineno, tok) || tok.size() != 2) throw ParseError(name, lineno, "expected header 'n d'");
  const auto n = parse_number<Index>(tok[0], name, lineno);
  const auto d = parse_number<Index>(tok[1], name, lineno);
  if (n < 0 || d < 1) throw ParseError(name, lineno, "invalid dimensions");
  EmbeddingSet set;
  set.source = path.stem().string();
  set.features.resize(n, d);
  set.node_ids.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    if (!next_tokens(in, lineno, tok)) throw ParseError(name, lineno, "expected " + std::to_string(n) + " rows");
    if (static_cast<Index>(tok.size()) != d + 1)
      throw ParseError(name, lineno, "expected node id and " + std::to_string(d) + " values");
    set.node_ids.push_back(parse_number<Index>(tok[0], name, lineno));
    for (Index j = 0; j < d; ++j)
      set.features(i, j) = parse_number<double>(tok[static_cast<std::size_t>(j) + 1], name, lineno);
  }
  if (next_tokens(in, lineno, tok)) throw ParseError(name, lineno, "trailing content");
  set.validate();
  return set;
}

EdgeIndex read_edge_list(const std::filesystem::path& path, const IndexList& node_ids) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string name = path.string();
  std::unordered_map<Index, Index> position;
  for (std::size_t i = 0; i < node_ids.size(); ++i) position.emplace(node_ids[i], static_cast<Index>(i));
  EdgeIndex edges;
  edges.num_nodes = static_cast<Index>(node_ids.size());
  std::size_t lineno = 0;
  std::vector<std::string> tok;
  while (next_tokens(in, lineno, tok)) {
    if (tok.size() != 2) throw ParseError(name, lineno, "expected 'u v'");
    const auto u = position.find(parse_number<Index>(tok[0], name, lineno));
    const auto v = position.find(parse_number<Index>(tok[1], name, lineno));
    if (u == position.end() || v == position.end()) throw ParseError(name, lineno, "unknown node id");
    edges.src.push_back(u->second);
    edges.dst.push_back(v->second);
  }
  return edges;
}

}  // namespace gkd::simrep
