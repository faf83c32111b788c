#include "gkd/train.hpp"

#include "gkd/log.hpp"
#include "gkd/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gkd::train {

std::string to_string(OptimKind k) { return k == OptimKind::sgd ? "sgd" : "adam"; }

OptimKind parse_optim(std::string_view s) {
  if (s == "sgd") return OptimKind::sgd;
  if (s == "adam") return OptimKind::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(s) + "'");
}

void OptimSpec::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("optim: lr must be positive");
  if (!(weight_decay >= 0)) throw std::invalid_argument("optim: weight_decay must be non-negative");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw std::invalid_argument("optim: betas must lie in [0, 1)");
  if (!(eps > 0)) throw std::invalid_argument("optim: eps must be positive");
}

Optimizer::Optimizer(const OptimSpec& spec, std::vector<Tensor> params) : spec_(spec), params_(std::move(params)) {
  spec_.validate();
  for (const Tensor& p : params_) {
    if (!p.is_leaf() || !p.requires_grad()) throw std::invalid_argument("optimizer: parameters must be trainable leaves");
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Optimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(spec_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(spec_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    Matrix g = p.grad();
    Matrix& w = p.leaf_value();
    if (spec_.weight_decay > 0) g += spec_.weight_decay * w;
    if (spec_.kind == OptimKind::sgd) {
      w -= spec_.lr * g;
      continue;
    }
    m_[k] = spec_.beta1 * m_[k] + (1.0 - spec_.beta1) * g;
    v_[k] = spec_.beta2 * v_[k] + (1.0 - spec_.beta2) * g.cwiseProduct(g);
    w.array() -= spec_.lr * (m_[k].array() / bc1) / ((v_[k].array() / bc2).sqrt() + spec_.eps);
  }
  zero_grad();
}

// ---------------------------------------------------------------------------
// Data

Dataset prepare_dataset(std::vector<Graph> graphs, const SplitSpec& split) {
  if (graphs.empty()) throw std::invalid_argument("dataset: no graphs");
  Dataset data;
  data.full = make_batch(graphs);
  data.num_classes = data.full.num_classes;
  if (data.num_classes < 2) throw std::invalid_argument("dataset: need at least 2 classes");
  std::vector<double> scores;
  if (data.full.label_kind == LabelKind::node) {
    data.task = Task::node;
    data.labels = data.full.node_labels;
    const IndexList deg = data.full.edges.in_degree();
    scores.assign(deg.begin(), deg.end());
  } else {
    data.task = Task::graph;
    for (std::size_t g = 0; g < data.full.graph_labels.size(); ++g) {
      const double y = data.full.graph_labels[g];
      if (y != std::floor(y) || y < 0 || y >= data.num_classes)
        throw std::invalid_argument("dataset: graph '" + data.full.graph_ids[g] +
                                    "' has a non-class label; training needs labels in [0, classes)");
      data.labels.push_back(static_cast<int>(y));
    }
    for (const Graph& g : graphs) scores.push_back(static_cast<double>(g.num_nodes()));
  }
  data.split = make_split(data.num_units(), split, scores);
  data.graphs = std::move(graphs);
  return data;
}

Batch graph_batch(const Dataset& data, const IndexList& graphs) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(graphs.size());
  for (Index g : graphs) ptrs.push_back(&data.graphs.at(static_cast<std::size_t>(g)));
  return make_batch(ptrs);
}

// ---------------------------------------------------------------------------
// Metrics

double accuracy(const Matrix& logits, const std::vector<int>& labels, const IndexList& rows) {
  if (rows.empty()) return 0.0;
  Index hits = 0;
  for (Index r : rows) {
    Index best = 0;
    logits.row(r).maxCoeff(&best);
    if (best == labels.at(static_cast<std::size_t>(r))) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_auc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] == 1) {
      pos += 1;
      rank_sum += rank[i];
    }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc: need both classes present");
  return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels, const IndexList& rows) {
  if (rows.empty()) throw std::invalid_argument("cross_entropy: no rows");
  const Tensor picked = ad::gather_rows(logits, rows);
  Matrix onehot = Matrix::Zero(picked.rows(), picked.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int y = labels.at(static_cast<std::size_t>(rows[i]));
    if (y < 0 || y >= picked.cols()) throw std::invalid_argument("cross_entropy: label out of range");
    onehot(static_cast<Index>(i), y) = 1.0;
  }
  const Tensor ll = ad::reduce_sum(ad::elementwise_mul(ad::row_log_softmax(picked), Tensor::constant(std::move(onehot))));
  return ad::mul_scalar(ll, -1.0 / static_cast<double>(rows.size()));
}

Evaluation evaluate_logits(const Matrix& logits, const Dataset& data, const IndexList& rows) {
  Evaluation ev;
  ev.loss = cross_entropy(Tensor::constant(logits), data.labels, rows).item();
  if (data.task == Task::graph && data.num_classes == 2) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (Index r : rows) {
      scores.push_back(logits(r, 1) - logits(r, 0));
      labels.push_back(data.labels[static_cast<std::size_t>(r)]);
    }
    ev.metric = "roc_auc";
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    ev.value = both ? roc_auc(scores, labels) : accuracy(logits, data.labels, rows);
    if (!both) ev.metric = "accuracy";
    return ev;
  }
  ev.metric = "accuracy";
  ev.value = accuracy(logits, data.labels, rows);
  return ev;
}

Evaluation evaluate(const Model& model, const Dataset& data, const IndexList& rows) {
  return evaluate_logits(forward(model.frozen(), data.full, false).logits.value(), data, rows);
}

// ---------------------------------------------------------------------------
// Training loops

void TrainOptions::validate() const {
  optim.validate();
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (patience < 0 || patience >= epochs) throw std::invalid_argument("train: patience must lie in [0, epochs)");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
}

namespace {

std::vector<Matrix> snapshot(const std::vector<Tensor>& params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const Tensor& p : params) out.push_back(p.value());
  return out;
}

void restore(std::vector<Tensor>& params, const std::vector<Matrix>& values) {
  for (std::size_t k = 0; k < params.size(); ++k) params[k].leaf_value() = values[k];
}

// One optimization target: a batch, its labels, and the rows under supervision.
struct Step {
  const Batch* batch;
  std::vector<int> labels;
  IndexList sup_rows;
  IndexList graphs;  // graph tasks: dataset indices of the member graphs
};

// Node tasks take one full-batch step per epoch; graph tasks walk shuffled
// mini-batches of training graphs.
class StepPlan {
 public:
  StepPlan(const Dataset& data, const TrainOptions& options) : data_(data), options_(options) {
    rng_ = make_rng(options.seed, "shuffle");
  }

  std::vector<Step> epoch(std::vector<Batch>& storage) {
    storage.clear();
    std::vector<Step> steps;
    if (data_.task == Task::node) {
      steps.push_back({&data_.full, data_.labels, data_.split.train, {}});
      return steps;
    }
    IndexList order = data_.split.train;
    shuffle(order.begin(), order.end(), rng_);
    const auto bs = static_cast<std::size_t>(options_.batch_size);
    storage.reserve((order.size() + bs - 1) / bs);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      IndexList members(order.begin() + static_cast<std::ptrdiff_t>(start),
                        order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      storage.push_back(graph_batch(data_, members));
      Step s{&storage.back(), {}, {}, members};
      for (std::size_t i = 0; i < members.size(); ++i) {
        s.labels.push_back(data_.labels[static_cast<std::size_t>(members[i])]);
        s.sup_rows.push_back(static_cast<Index>(i));
      }
      steps.push_back(std::move(s));
    }
    return steps;
  }

 private:
  const Dataset& data_;
  const TrainOptions& options_;
  Rng rng_;
};

void check_finite(double loss, int epoch) {
  if (!std::isfinite(loss))
    throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch));
}

void check_data(const ModelSpec& spec, const Dataset& data) {
  if (data.split.train.empty() || data.split.valid.empty()) throw std::invalid_argument("train: empty train or valid split");
  if (spec.in_dim != data.feature_dim())
    throw std::invalid_argument("train: model input width " + std::to_string(spec.in_dim) + " != data width " +
                                std::to_string(data.feature_dim()));
  if (spec.num_classes != data.num_classes) throw std::invalid_argument("train: model class count != data class count");
  if (spec.task != data.task) throw std::invalid_argument("train: model task != data task");
}

// Shared early-stopping loop. `run_step` returns the loss of one step after
// applying its update.
template <class StepFn>
History fit(const Model& model, std::vector<Tensor> params, const Dataset& data, const TrainOptions& options,
            StepFn run_step) {
  StepPlan plan(data, options);
  History history;
  std::vector<Matrix> best = snapshot(params);
  history.best_valid_metric = -std::numeric_limits<double>::infinity();
  std::vector<Batch> storage;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    double total = 0;
    const std::vector<Step> steps = plan.epoch(storage);
    for (const Step& s : steps) total += run_step(s);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = total / static_cast<double>(steps.size());
    check_finite(rec.train_loss, epoch);
    const Evaluation ev = evaluate_logits(forward(model, data.full, false).logits.value(), data, data.split.valid);
    rec.valid_loss = ev.loss;
    rec.valid_metric = ev.value;
    history.epochs.push_back(rec);
    if (rec.valid_metric > history.best_valid_metric) {
      history.best_valid_metric = rec.valid_metric;
      history.best_epoch = epoch;
      best = snapshot(params);
    }
    if (epoch - history.best_epoch >= options.patience) break;
  }
  restore(params, best);
  return history;
}

}  // namespace

TrainResult train_supervised(ModelSpec spec, const Dataset& data, const TrainOptions& options) {
  options.validate();
  spec.seed = options.seed;
  spec.validate();
  check_data(spec, data);
  Model model(spec);
  Optimizer opt(options.optim, model.parameter_tensors());
  Rng dropout_rng = make_rng(options.seed, "dropout");
  History history = fit(model, model.parameter_tensors(), data, options, [&](const Step& s) {
    const ForwardResult out = forward(model, *s.batch, true, &dropout_rng);
    const Tensor loss = cross_entropy(out.logits, s.labels, s.sup_rows);
    const double value = loss.item();
    ad::backward(loss);
    opt.step();
    return value;
  });
  return {std::move(model), std::move(history)};
}

DistillResult distill(const Model& teacher_in, ModelSpec student_spec, const distill::DistillSpec& dspec,
                      const Dataset& data, const TrainOptions& options) {
  options.validate();
  dspec.validate();
  student_spec.seed = options.seed;
  student_spec.validate();
  check_data(student_spec, data);
  if (teacher_in.spec().in_dim != student_spec.in_dim || teacher_in.spec().num_classes != student_spec.num_classes ||
      teacher_in.spec().task != student_spec.task)
    throw std::invalid_argument("distill: teacher and student must share input width, classes and task");

  const Model teacher = teacher_in.frozen();
  Model student(student_spec);
  distill::Objective objective(dspec, student_spec.hidden, teacher.spec().hidden, options.seed);

  std::vector<Tensor> params = student.parameter_tensors();
  for (const Tensor& p : objective.parameters()) params.push_back(p);
  Optimizer opt(options.optim, params);
  Rng dropout_rng = make_rng(options.seed, "dropout");
  const std::uint64_t gsp_base = derive_seed(options.seed, "gsp");
  std::uint64_t step_index = 0;

  // The teacher is frozen and deterministic in eval mode: one pass serves
  // every full-batch step.
  std::optional<ForwardResult> teacher_full;
  if (data.task == Task::node) teacher_full = forward(teacher, data.full, false);

  History history = fit(student, params, data, options, [&](const Step& s) {
    const ForwardResult t = teacher_full ? *teacher_full : forward(teacher, *s.batch, false);
    const ForwardResult out = forward(student, *s.batch, true, &dropout_rng);
    const Tensor sup = cross_entropy(out.logits, s.labels, s.sup_rows);
    Tensor kd;
    if (dspec.method.kd) kd = distill::kd_loss(out.logits, t.logits, dspec.tau1);
    const Tensor aux = objective.aux_loss(out.embeddings, t.embeddings, *s.batch, splitmix64(gsp_base + step_index++));
    const Tensor loss = distill::combined_loss(dspec, sup, kd, aux);
    const double value = loss.item();
    ad::backward(loss);
    opt.step();
    return value;
  });
  return {std::move(student), std::move(history), std::move(objective)};
}

}  // namespace gkd::train
