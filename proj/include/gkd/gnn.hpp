#pragma once

#include "gkd/autodiff.hpp"
#include "gkd/graph.hpp"
#include "gkd/random.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gkd {

enum class Arch { gcn, gin, sage, mlp };
enum class Task { node, graph };
enum class Pool { mean, sum };

std::string to_string(Arch a);
std::string to_string(Task t);
std::string to_string(Pool p);
Arch parse_arch(std::string_view s);
Task parse_task(std::string_view s);
Pool parse_pool(std::string_view s);

struct ModelSpec {
  Arch arch = Arch::gcn;
  int num_layers = 2;
  int hidden = 16;
  int in_dim = 1;
  int num_classes = 2;
  Task task = Task::node;
  std::optional<Pool> pool;  // present iff task == graph
  double dropout = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelSpec&) const = default;
};

/// Affine map x W (+ b).
struct Linear {
  ad::Tensor weight;  // in x out
  ad::Tensor bias;    // 1 x out, undefined when bias-free
};

ad::Tensor apply(const Linear& layer, const ad::Tensor& x);
Index count_params(const Linear& layer);
/// Glorot-uniform weight, zero bias.
Linear make_linear(Index in, Index out, bool bias, Rng& rng);

using NamedParameter = std::pair<std::string, ad::Tensor>;

class Model {
 public:
  /// Fresh parameters drawn from the "init" stream of spec.seed.
  explicit Model(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<ad::Tensor> parameter_tensors() const;
  const ad::Tensor& param(std::string_view name) const;

  /// Deep copy with independent parameter storage.
  Model clone() const;
  /// Deep copy whose parameters are constants: no gradients can reach them.
  Model frozen() const;
  bool is_frozen() const;
  /// Copies parameter values from a model of identical spec.
  void assign_values(const Model& other);

 private:
  Model(ModelSpec spec, std::vector<NamedParameter> params) : spec_(std::move(spec)), params_(std::move(params)) {}
  ModelSpec spec_;
  std::vector<NamedParameter> params_;
};

Index count_params(const Model& model);

// ---------------------------------------------------------------------------
// Message passing

/// Symmetric normalization D^-1/2 (A + I) D^-1/2 with D the in-degree of A + I.
struct GcnNormalization {
  Vector self_weight;  // per node: 1 / deg
  Vector edge_weight;  // per edge (j -> i): 1 / sqrt(deg_j deg_i)
};
GcnNormalization gcn_normalization(const EdgeIndex& edges);

/// Returns A_hat X.
ad::Tensor gcn_propagate(const ad::Tensor& x, const EdgeIndex& edges);
/// A_hat X W (+ b).
ad::Tensor gcn_layer(const ad::Tensor& x, const EdgeIndex& edges, const Linear& transform);
/// Sum over incoming neighbours j -> i of x_j.
ad::Tensor neighbor_sum(const ad::Tensor& x, const EdgeIndex& edges);
/// Mean over incoming neighbours; zero rows for isolated nodes.
ad::Tensor neighbor_mean(const ad::Tensor& x, const EdgeIndex& edges);

/// mlp((1 + eps) x_i + sum_j x_j) with a two-layer relu mlp.
ad::Tensor gin_layer(const ad::Tensor& x, const EdgeIndex& edges, const Linear& mlp_in, const Linear& mlp_out,
                     const ad::Tensor& eps);
/// concat(x_i, mean_j x_j) W (+ b).
ad::Tensor sage_layer(const ad::Tensor& x, const EdgeIndex& edges, const Linear& transform);

struct ForwardResult {
  ad::Tensor embeddings;  // N x hidden, penultimate node features
  ad::Tensor logits;      // N x C (node task) or G x C (graph task)
};

/// Train mode applies dropout between message-passing layers, drawing masks
/// from `dropout_rng`, which is then required whenever dropout > 0.
ForwardResult forward(const Model& model, const Batch& batch, bool train_mode, Rng* dropout_rng = nullptr);

/// Graph-level readout of node rows according to batch.node_to_graph.
ad::Tensor pool_nodes(const ad::Tensor& x, const Batch& batch, Pool pool);

// ---------------------------------------------------------------------------
// Checkpoints (JSON container, 64-bit values).

void save_checkpoint(const Model& model, const std::filesystem::path& path);
/// Throws if the stored parameter names or shapes disagree with the spec.
Model load_checkpoint(const std::filesystem::path& path);
/// As above, and additionally rejects a stored spec different from `expected`
/// in architecture, width, depth, input width or class count.
Model load_checkpoint(const std::filesystem::path& path, const ModelSpec& expected);

}  // namespace gkd
