#pragma once

#include "gkd/autodiff.hpp"
#include "gkd/distill.hpp"
#include "gkd/gnn.hpp"
#include "gkd/graph.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gkd::train {

using ad::Tensor;

enum class OptimKind { sgd, adam };
std::string to_string(OptimKind k);
OptimKind parse_optim(std::string_view s);

struct OptimSpec {
  OptimKind kind = OptimKind::adam;
  double lr = 1e-2;
  double weight_decay = 0.0;  // L2 term added to the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

class Optimizer {
 public:
  Optimizer(const OptimSpec& spec, std::vector<Tensor> params);

  /// Applies one update from the accumulated gradients, then clears them.
  void step();
  void zero_grad();
  const std::vector<Tensor>& parameters() const { return params_; }

 private:
  OptimSpec spec_;
  std::vector<Tensor> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Data

/// A labelled dataset with a fixed split over prediction units: nodes of the
/// merged graph for node tasks, whole graphs for graph tasks.
struct Dataset {
  Task task = Task::node;
  int num_classes = 0;
  std::vector<Graph> graphs;
  Batch full;               // every graph, in order
  std::vector<int> labels;  // one per prediction unit
  Split split;

  Index feature_dim() const { return full.feature_dim(); }
  Index num_units() const { return static_cast<Index>(labels.size()); }
};

/// Builds the split; planted-shift mode orders nodes by degree and graphs by size.
Dataset prepare_dataset(std::vector<Graph> graphs, const SplitSpec& split);
Batch graph_batch(const Dataset& data, const IndexList& graphs);

// ---------------------------------------------------------------------------
// Metrics

double accuracy(const Matrix& logits, const std::vector<int>& labels, const IndexList& rows);
/// Mann-Whitney rank statistic with average ranks for ties.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct Evaluation {
  std::string metric;  // "accuracy" or "roc_auc"
  double value = 0;
  double loss = 0;     // mean cross entropy
};

Evaluation evaluate_logits(const Matrix& logits, const Dataset& data, const IndexList& rows);
Evaluation evaluate(const Model& model, const Dataset& data, const IndexList& rows);

/// Mean cross entropy of `logits` rows against `labels` at `rows`.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, const IndexList& rows);

// ---------------------------------------------------------------------------
// Training loops

struct TrainOptions {
  OptimSpec optim;
  int epochs = 300;
  int patience = 50;
  int batch_size = 32;  // graphs per step, graph tasks only
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double valid_loss = 0;
  double valid_metric = 0;
};

struct History {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_valid_metric = 0;
};

struct TrainResult {
  Model model;
  History history;
};

/// Cross-entropy training with early stopping on the validation metric; the
/// returned weights are those of the best epoch. `spec.seed` is replaced by
/// `options.seed`.
TrainResult train_supervised(ModelSpec spec, const Dataset& data, const TrainOptions& options);

struct DistillResult {
  Model student;
  History history;
  distill::Objective objective;  // trained projection heads
};

/// Combined distillation objective against a frozen copy of `teacher`.
DistillResult distill(const Model& teacher, ModelSpec student_spec, const distill::DistillSpec& dspec,
                      const Dataset& data, const TrainOptions& options);

}  // namespace gkd::train
