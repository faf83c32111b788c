#include "gkd/gnn.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace gkd {

using ad::Tensor;

std::string to_string(Arch a) {
  switch (a) {
    case Arch::gcn: return "GCN";
    case Arch::gin: return "GIN";
    case Arch::sage: return "GraphSage";
    case Arch::mlp: return "MLP";
  }
  return "?";
}

std::string to_string(Task t) { return t == Task::node ? "node" : "graph"; }
std::string to_string(Pool p) { return p == Pool::mean ? "mean" : "sum"; }

namespace {
std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace

Arch parse_arch(std::string_view s) {
  const std::string l = lower(s);
  if (l == "gcn") return Arch::gcn;
  if (l == "gin") return Arch::gin;
  if (l == "graphsage" || l == "sage") return Arch::sage;
  if (l == "mlp") return Arch::mlp;
  throw std::invalid_argument("unknown architecture '" + std::string(s) + "'");
}

Task parse_task(std::string_view s) {
  const std::string l = lower(s);
  if (l == "node") return Task::node;
  if (l == "graph") return Task::graph;
  throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

Pool parse_pool(std::string_view s) {
  const std::string l = lower(s);
  if (l == "mean") return Pool::mean;
  if (l == "sum") return Pool::sum;
  throw std::invalid_argument("unknown pooling '" + std::string(s) + "'");
}

void ModelSpec::validate() const {
  if (num_layers < 1) throw std::invalid_argument("ModelSpec: num_layers must be >= 1");
  if (hidden < 1) throw std::invalid_argument("ModelSpec: hidden width must be >= 1");
  if (in_dim < 1) throw std::invalid_argument("ModelSpec: input width must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("ModelSpec: num_classes must be >= 1");
  if ((task == Task::graph) != pool.has_value())
    throw std::invalid_argument("ModelSpec: pool must be set exactly for graph tasks");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("ModelSpec: dropout must lie in [0, 1)");
}

// ---------------------------------------------------------------------------
// Linear

Tensor apply(const Linear& layer, const Tensor& x) {
  Tensor y = ad::matmul(x, layer.weight);
  return layer.bias.defined() ? ad::add(y, layer.bias) : y;
}

Index count_params(const Linear& layer) {
  Index n = layer.weight.value().size();
  if (layer.bias.defined()) n += layer.bias.value().size();
  return n;
}

Linear make_linear(Index in, Index out, bool bias, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (Index i = 0; i < in; ++i)
    for (Index j = 0; j < out; ++j) w(i, j) = (2.0 * uniform01(rng) - 1.0) * bound;
  Linear l;
  l.weight = Tensor::parameter(std::move(w));
  if (bias) l.bias = Tensor::parameter(Matrix::Zero(1, out));
  return l;
}

// ---------------------------------------------------------------------------
// Model

namespace {

void push_linear(std::vector<NamedParameter>& params, const std::string& prefix, Linear l) {
  params.emplace_back(prefix + ".weight", std::move(l.weight));
  if (l.bias.defined()) params.emplace_back(prefix + ".bias", std::move(l.bias));
}

std::vector<NamedParameter> init_parameters(const ModelSpec& spec) {
  Rng rng = make_rng(spec.seed, "init");
  std::vector<NamedParameter> params;
  Index width = spec.in_dim;
  for (int l = 0; l < spec.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    switch (spec.arch) {
      case Arch::gcn:
      case Arch::mlp:
        push_linear(params, p, make_linear(width, spec.hidden, true, rng));
        break;
      case Arch::sage:
        push_linear(params, p, make_linear(2 * width, spec.hidden, true, rng));
        break;
      case Arch::gin:
        push_linear(params, p + ".mlp0", make_linear(width, spec.hidden, true, rng));
        push_linear(params, p + ".mlp1", make_linear(spec.hidden, spec.hidden, true, rng));
        params.emplace_back(p + ".eps", Tensor::parameter(Matrix::Zero(1, 1)));
        break;
    }
    width = spec.hidden;
  }
  push_linear(params, "classifier", make_linear(width, spec.num_classes, true, rng));
  return params;
}

}  // namespace

Model::Model(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  params_ = init_parameters(spec_);
}

std::vector<Tensor> Model::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

const Tensor& Model::param(std::string_view name) const {
  for (const auto& [n, t] : params_)
    if (n == name) return t;
  throw std::out_of_range("model has no parameter '" + std::string(name) + "'");
}

Model Model::clone() const {
  std::vector<NamedParameter> copy;
  copy.reserve(params_.size());
  for (const auto& [n, t] : params_) copy.emplace_back(n, Tensor::parameter(t.value()));
  return Model(spec_, std::move(copy));
}

Model Model::frozen() const {
  std::vector<NamedParameter> copy;
  copy.reserve(params_.size());
  for (const auto& [n, t] : params_) copy.emplace_back(n, Tensor::constant(t.value()));
  return Model(spec_, std::move(copy));
}

bool Model::is_frozen() const {
  for (const auto& [n, t] : params_)
    if (t.requires_grad()) return false;
  return true;
}

void Model::assign_values(const Model& other) {
  if (other.params_.size() != params_.size()) throw std::invalid_argument("assign_values: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Matrix& src = other.params_[i].second.value();
    Matrix& dst = params_[i].second.leaf_value();
    if (other.params_[i].first != params_[i].first || src.rows() != dst.rows() || src.cols() != dst.cols())
      throw std::invalid_argument("assign_values: parameter '" + params_[i].first + "' mismatch");
    dst = src;
  }
}

Index count_params(const Model& model) {
  Index n = 0;
  for (const auto& [name, t] : model.parameters()) n += t.value().size();
  return n;
}

// ---------------------------------------------------------------------------
// Message passing

GcnNormalization gcn_normalization(const EdgeIndex& edges) {
  const IndexList in_deg = edges.in_degree();
  Vector deg(edges.num_nodes);
  for (Index i = 0; i < edges.num_nodes; ++i) deg(i) = 1.0 + static_cast<double>(in_deg[static_cast<std::size_t>(i)]);
  GcnNormalization norm;
  norm.self_weight = deg.cwiseInverse();
  norm.edge_weight.resize(edges.num_edges());
  for (Index e = 0; e < edges.num_edges(); ++e) {
    const auto k = static_cast<std::size_t>(e);
    norm.edge_weight(e) = 1.0 / std::sqrt(deg(edges.src[k]) * deg(edges.dst[k]));
  }
  return norm;
}

Tensor gcn_propagate(const Tensor& x, const EdgeIndex& edges) {
  if (x.rows() != edges.num_nodes) throw ad::ShapeError("gcn_propagate: feature rows != node count");
  const GcnNormalization norm = gcn_normalization(edges);
  Tensor self = ad::scale_rows(x, norm.self_weight);
  if (edges.num_edges() == 0) return self;
  Tensor msgs = ad::scale_rows(ad::gather_rows(x, edges.src), norm.edge_weight);
  return ad::add(self, ad::scatter_sum(msgs, edges.dst, edges.num_nodes));
}

Tensor gcn_layer(const Tensor& x, const EdgeIndex& edges, const Linear& transform) {
  Tensor y = gcn_propagate(ad::matmul(x, transform.weight), edges);
  return transform.bias.defined() ? ad::add(y, transform.bias) : y;
}

Tensor neighbor_sum(const Tensor& x, const EdgeIndex& edges) {
  if (x.rows() != edges.num_nodes) throw ad::ShapeError("neighbor_sum: feature rows != node count");
  if (edges.num_edges() == 0) return Tensor::constant(Matrix::Zero(x.rows(), x.cols()));
  return ad::scatter_sum(ad::gather_rows(x, edges.src), edges.dst, edges.num_nodes);
}

Tensor neighbor_mean(const Tensor& x, const EdgeIndex& edges) {
  if (x.rows() != edges.num_nodes) throw ad::ShapeError("neighbor_mean: feature rows != node count");
  if (edges.num_edges() == 0) return Tensor::constant(Matrix::Zero(x.rows(), x.cols()));
  const IndexList in_deg = edges.in_degree();
  Vector inv(edges.num_nodes);
  for (Index i = 0; i < edges.num_nodes; ++i) {
    const auto d = in_deg[static_cast<std::size_t>(i)];
    inv(i) = d > 0 ? 1.0 / static_cast<double>(d) : 0.0;
  }
  return ad::scale_rows(neighbor_sum(x, edges), inv);
}

Tensor gin_layer(const Tensor& x, const EdgeIndex& edges, const Linear& mlp_in, const Linear& mlp_out,
                 const Tensor& eps) {
  Tensor combined = ad::add(ad::add(x, ad::scale(x, eps)), neighbor_sum(x, edges));
  return apply(mlp_out, ad::relu(apply(mlp_in, combined)));
}

Tensor sage_layer(const Tensor& x, const EdgeIndex& edges, const Linear& transform) {
  return apply(transform, ad::concat_cols(x, neighbor_mean(x, edges)));
}

Tensor pool_nodes(const Tensor& x, const Batch& batch, Pool pool) {
  return pool == Pool::mean ? ad::segment_mean(x, batch.node_to_graph, batch.num_graphs())
                            : ad::scatter_sum(x, batch.node_to_graph, batch.num_graphs());
}

namespace {

Linear linear_of(const Model& m, const std::string& prefix) {
  Linear l;
  l.weight = m.param(prefix + ".weight");
  l.bias = m.param(prefix + ".bias");
  return l;
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  Matrix mask(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = uniform01(rng) < rate ? 0.0 : keep;
  return ad::elementwise_mul(x, Tensor::constant(std::move(mask)));
}

}  // namespace

ForwardResult forward(const Model& model, const Batch& batch, bool train_mode, Rng* dropout_rng) {
  const ModelSpec& spec = model.spec();
  if (batch.feature_dim() != spec.in_dim)
    throw std::invalid_argument("forward: batch feature width " + std::to_string(batch.feature_dim()) +
                                " != model input width " + std::to_string(spec.in_dim));
  const bool use_dropout = train_mode && spec.dropout > 0.0;
  if (use_dropout && dropout_rng == nullptr) throw std::logic_error("forward: dropout requires an rng");

  Tensor h = Tensor::constant(batch.features);
  for (int l = 0; l < spec.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    if (l > 0 && use_dropout) h = dropout(h, spec.dropout, *dropout_rng);
    switch (spec.arch) {
      case Arch::gcn: h = gcn_layer(h, batch.edges, linear_of(model, p)); break;
      case Arch::sage: h = sage_layer(h, batch.edges, linear_of(model, p)); break;
      case Arch::mlp: h = apply(linear_of(model, p), h); break;
      case Arch::gin:
        h = gin_layer(h, batch.edges, linear_of(model, p + ".mlp0"), linear_of(model, p + ".mlp1"),
                      model.param(p + ".eps"));
        break;
    }
    h = ad::relu(h);
  }

  ForwardResult out;
  out.embeddings = h;
  const Linear classifier = linear_of(model, "classifier");
  if (spec.task == Task::graph) {
    out.logits = apply(classifier, pool_nodes(h, batch, *spec.pool));
  } else {
    out.logits = apply(classifier, h);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointFormat = "gkd-checkpoint";
constexpr int kCheckpointVersion = 1;

nlohmann::json spec_to_json(const ModelSpec& s) {
  nlohmann::json j;
  j["arch"] = to_string(s.arch);
  j["num_layers"] = s.num_layers;
  j["hidden"] = s.hidden;
  j["in_dim"] = s.in_dim;
  j["num_classes"] = s.num_classes;
  j["task"] = to_string(s.task);
  j["pool"] = s.pool ? to_string(*s.pool) : "none";
  j["dropout"] = s.dropout;
  j["seed"] = s.seed;
  return j;
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.arch = parse_arch(j.at("arch").get<std::string>());
  s.num_layers = j.at("num_layers").get<int>();
  s.hidden = j.at("hidden").get<int>();
  s.in_dim = j.at("in_dim").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.task = parse_task(j.at("task").get<std::string>());
  const auto pool = j.at("pool").get<std::string>();
  if (pool != "none") s.pool = parse_pool(pool);
  s.dropout = j.at("dropout").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["spec"] = spec_to_json(model.spec());
  auto& params = j["parameters"] = nlohmann::json::array();
  for (const auto& [name, t] : model.parameters()) {
    const Matrix& v = t.value();
    params.push_back({{"name", name},
                      {"rows", v.rows()},
                      {"cols", v.cols()},
                      {"values", std::vector<double>(v.data(), v.data() + v.size())}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << j.dump() << "\n";
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != kCheckpointFormat || j.value("version", 0) != kCheckpointVersion)
    throw std::runtime_error("checkpoint " + path.string() + ": unsupported format or version");

  Model model(spec_from_json(j.at("spec")));
  const auto& stored = j.at("parameters");
  if (stored.size() != model.parameters().size())
    throw std::runtime_error("checkpoint " + path.string() + ": parameter count does not match spec");
  Model values = model.clone();
  for (std::size_t i = 0; i < stored.size(); ++i) {
    const auto& entry = stored[i];
    const auto& [name, tensor] = values.parameters()[i];
    const auto rows = entry.at("rows").get<Index>();
    const auto cols = entry.at("cols").get<Index>();
    const auto data = entry.at("values").get<std::vector<double>>();
    if (entry.at("name").get<std::string>() != name || rows != tensor.rows() || cols != tensor.cols() ||
        static_cast<Index>(data.size()) != rows * cols)
      throw std::runtime_error("checkpoint " + path.string() + ": parameter '" + name +
                               "' does not match spec shape");
    ad::Tensor t = tensor;
    t.leaf_value() = Eigen::Map<const Matrix>(data.data(), rows, cols);
  }
  return values;
}

Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected) {
  Model m = load_checkpoint(path);
  const ModelSpec& s = m.spec();
  if (s.arch != expected.arch || s.num_layers != expected.num_layers || s.hidden != expected.hidden ||
      s.in_dim != expected.in_dim || s.num_classes != expected.num_classes || s.task != expected.task)
    throw std::runtime_error("checkpoint " + path.string() + ": stored model spec does not match the expected spec");
  return m;
}

}  // namespace gkd
