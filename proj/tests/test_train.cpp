#include "helpers.hpp"

#include "gkd/train.hpp"

#include <doctest.h>

#include <cmath>

using namespace gkd;
using namespace gkd::train;
using gkd::testing::random_matrix;

namespace {

// Two classes split by the sign of the first feature, no edges.
Dataset separable(Index n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x = random_matrix(n, 2, rng);
  std::vector<int> y(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    x(i, 0) += x(i, 0) > 0 ? 3.0 : -3.0;
    y[static_cast<std::size_t>(i)] = x(i, 0) > 0 ? 1 : 0;
  }
  std::vector<Graph> g;
  g.emplace_back("sep", n, std::vector<Edge>{}, x, NodeLabels{y}, 2);
  SplitSpec split;
  split.seed = seed;
  return prepare_dataset(std::move(g), split);
}

Dataset small_sbm(std::uint64_t seed) {
  SbmParams p;
  p.blocks = 3;
  p.nodes_per_block = 30;
  p.p_in = 0.2;
  p.p_out = 0.02;
  p.d_in = 6;
  p.noise = 1.0;
  p.seed = seed;
  std::vector<Graph> g{synth_sbm(p)};
  SplitSpec split;
  split.seed = seed;
  return prepare_dataset(std::move(g), split);
}

Dataset small_mol(std::uint64_t seed) {
  MolParams p;
  p.count = 40;
  p.min_n = 6;
  p.max_n = 10;
  p.seed = seed;
  SplitSpec split;
  split.seed = seed;
  return prepare_dataset(synth_molgraphs(p), split);
}

ModelSpec student_for(const Dataset& d, Arch arch = Arch::gcn) {
  ModelSpec s;
  s.arch = arch;
  s.num_layers = 2;
  s.hidden = 8;
  s.in_dim = static_cast<int>(d.feature_dim());
  s.num_classes = d.num_classes;
  s.task = d.task;
  if (d.task == Task::graph) s.pool = Pool::mean;
  return s;
}

TrainOptions options(int epochs, int patience, std::uint64_t seed) {
  TrainOptions o;
  o.epochs = epochs;
  o.patience = patience;
  o.seed = seed;
  o.batch_size = 8;
  return o;
}

bool same_weights(const Model& a, const Model& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    if (a.parameters()[i].second.value() != b.parameters()[i].second.value()) return false;
  return true;
}

}  // namespace

TEST_CASE("roc auc") {
  CHECK(roc_auc({0.9, 0.8, 0.3, 0.1}, {1, 0, 1, 0}) == doctest::Approx(0.75));
  CHECK(roc_auc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == doctest::Approx(0.5));
  CHECK(roc_auc({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc({0.1, 0.2, 0.3}, {1, 0, 0}) == 0.0);
  // One tie across classes counts one half.
  CHECK(roc_auc({0.4, 0.4, 0.1}, {1, 0, 0}) == doctest::Approx(0.75));

  // Pairwise count oracle on random scores with ties.
  Rng rng(1);
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    s.push_back(std::floor(uniform01(rng) * 10));
    y.push_back(uniform01(rng) < 0.4 ? 1 : 0);
  }
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  CHECK(roc_auc(s, y) == doctest::Approx(wins / pairs).epsilon(1e-12));
}

TEST_CASE("accuracy and cross entropy") {
  Matrix logits(3, 2);
  logits << 2, 1, 0, 3, 1, 0;
  CHECK(accuracy(logits, {0, 1, 1}, {0, 1, 2}) == doctest::Approx(2.0 / 3));
  CHECK(accuracy(logits, {0, 1, 1}, {0, 1}) == 1.0);

  const double ce = cross_entropy(Tensor::constant(logits), {0, 1, 1}, {2}).item();
  CHECK(ce == doctest::Approx(std::log(1 + std::exp(1.0))));
  Tensor z = Tensor::parameter(logits);
  ad::backward(cross_entropy(z, {0, 1, 1}, {0, 2}));
  CHECK(z.grad().row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(z.grad().row(0).sum() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("adam matches a reference implementation on a quadratic bowl") {
  Rng rng(2);
  const Matrix centre = random_matrix(3, 2, rng);
  const Matrix curvature = (random_matrix(3, 2, rng).array().abs() + 0.5).matrix();
  const Matrix start = random_matrix(3, 2, rng);
  OptimSpec spec;
  spec.lr = 0.05;
  spec.weight_decay = 0.01;

  Tensor w = Tensor::parameter(start);
  Optimizer opt(spec, {w});

  Matrix ref = start;
  Matrix m = Matrix::Zero(3, 2), v = Matrix::Zero(3, 2);
  double b1t = 1, b2t = 1;
  for (int step = 0; step < 100; ++step) {
    const Tensor d = ad::sub(w, Tensor::constant(centre));
    ad::backward(ad::mul_scalar(ad::reduce_sum(ad::elementwise_mul(Tensor::constant(curvature), ad::elementwise_mul(d, d))), 0.5));
    opt.step();
    CHECK_FALSE(w.has_grad());

    b1t *= 0.9;
    b2t *= 0.999;
    for (Index i = 0; i < ref.size(); ++i) {
      const double g = curvature.data()[i] * (ref.data()[i] - centre.data()[i]) + 0.01 * ref.data()[i];
      m.data()[i] = 0.9 * m.data()[i] + 0.1 * g;
      v.data()[i] = 0.999 * v.data()[i] + 0.001 * g * g;
      const double mh = m.data()[i] / (1 - b1t);
      const double vh = v.data()[i] / (1 - b2t);
      ref.data()[i] -= 0.05 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  CHECK(gkd::testing::max_abs_diff(w.value(), ref) < 1e-12);
}

TEST_CASE("sgd step and optimizer validation") {
  Tensor w = Tensor::parameter(Matrix::Constant(1, 2, 1.0));
  OptimSpec spec;
  spec.kind = OptimKind::sgd;
  spec.lr = 0.5;
  Optimizer opt(spec, {w});
  ad::backward(ad::reduce_sum(ad::mul_scalar(w, 2.0)));
  opt.step();
  CHECK(w.value() == Matrix::Constant(1, 2, 0.0));

  spec.lr = 0;
  CHECK_THROWS(spec.validate());
  CHECK(parse_optim("adam") == OptimKind::adam);
  CHECK_THROWS(parse_optim("rmsprop"));
}

TEST_CASE("separable node task reaches near-perfect accuracy") {
  const Dataset d = separable(200, 3);
  ModelSpec s = student_for(d, Arch::mlp);
  auto opts = options(200, 199, 1);
  const TrainResult r = train_supervised(s, d, opts);
  CHECK(evaluate(r.model, d, d.split.train).value >= 0.99);
  CHECK(evaluate(r.model, d, d.split.test).metric == "accuracy");
}

TEST_CASE("early stopping returns the best epoch") {
  const Dataset d = small_sbm(4);
  const TrainResult r = train_supervised(student_for(d), d, options(40, 10, 2));
  double best = -1;
  for (const EpochRecord& e : r.history.epochs) best = std::max(best, e.valid_metric);
  CHECK(r.history.best_valid_metric == best);
  CHECK(evaluate(r.model, d, d.split.valid).value == doctest::Approx(best).epsilon(1e-12));
  CHECK(r.history.epochs[static_cast<std::size_t>(r.history.best_epoch)].valid_metric == best);

  // patience 0 stops after the first epoch and keeps its weights.
  const TrainResult z = train_supervised(student_for(d), d, options(40, 0, 2));
  CHECK(z.history.best_epoch == 0);
  CHECK(z.history.epochs.size() >= 1);
  const TrainResult one = train_supervised(student_for(d), d, options(1, 0, 2));
  CHECK(same_weights(z.model, one.model));
}

TEST_CASE("training is deterministic given the seed") {
  const Dataset d = small_sbm(5);
  ModelSpec s = student_for(d);
  s.dropout = 0.3;
  const TrainResult a = train_supervised(s, d, options(15, 14, 7));
  const TrainResult b = train_supervised(s, d, options(15, 14, 7));
  CHECK(same_weights(a.model, b.model));
  for (std::size_t i = 0; i < a.history.epochs.size(); ++i)
    CHECK(a.history.epochs[i].train_loss == b.history.epochs[i].train_loss);
  const TrainResult c = train_supervised(s, d, options(15, 14, 8));
  CHECK_FALSE(same_weights(a.model, c.model));

  const Dataset m = small_mol(1);
  const TrainResult ga = train_supervised(student_for(m, Arch::gin), m, options(5, 4, 3));
  const TrainResult gb = train_supervised(student_for(m, Arch::gin), m, options(5, 4, 3));
  CHECK(same_weights(ga.model, gb.model));
  CHECK(evaluate(ga.model, m, m.split.test).metric == "roc_auc");
}

TEST_CASE("supervised distillation reproduces supervised training") {
  const Dataset d = small_sbm(6);
  const TrainResult teacher = train_supervised(student_for(d), d, options(5, 4, 0));
  distill::DistillSpec spec;
  spec.method = distill::parse_method("supervised");
  const auto opts = options(12, 11, 3);
  const DistillResult dr = train::distill(teacher.model, student_for(d), spec, d, opts);
  const TrainResult sr = train_supervised(student_for(d), d, opts);
  CHECK(same_weights(dr.student, sr.model));
  CHECK(dr.history.best_epoch == sr.history.best_epoch);
}

TEST_CASE("distillation leaves the teacher untouched and learns from it") {
  const Dataset d = small_sbm(7);
  ModelSpec ts = student_for(d);
  ts.hidden = 32;
  const TrainResult teacher = train_supervised(ts, d, options(60, 20, 0));
  const double teacher_acc = evaluate(teacher.model, d, d.split.valid).value;
  REQUIRE(teacher_acc > 0.5);
  const Model before = teacher.model.clone();

  for (const char* method : {"kd", "kd+gcrd", "fitnet", "at", "lsp", "gsp", "crd"}) {
    INFO(method);
    distill::DistillSpec spec;
    spec.method = distill::parse_method(method);
    spec.alpha = 1.0;
    const DistillResult r = train::distill(teacher.model, student_for(d), spec, d, options(30, 29, 1));
    CHECK(same_weights(before, teacher.model));
    for (const auto& [name, p] : teacher.model.parameters()) CHECK_FALSE(p.has_grad());
    if (std::string(method) == "kd") CHECK(evaluate(r.student, d, d.split.valid).value > 1.0 / 3 + 0.1);
  }
}

TEST_CASE("graph tasks train in mini-batches") {
  const Dataset m = small_mol(2);
  CHECK(m.task == Task::graph);
  CHECK(m.num_units() == 40);
  const TrainResult t = train_supervised(student_for(m, Arch::gin), m, options(6, 5, 0));
  distill::DistillSpec spec;
  spec.method = distill::parse_method("kd+gcrd");
  spec.contrast_level = distill::ContrastLevel::global;
  const DistillResult r = train::distill(t.model, student_for(m, Arch::gcn), spec, m, options(4, 3, 1));
  CHECK(r.history.epochs.size() >= 1);
  const Batch b = graph_batch(m, {0, 2});
  CHECK(b.num_graphs() == 2);
}

TEST_CASE("option and dataset validation") {
  TrainOptions o;
  o.epochs = 10;
  o.patience = 10;
  CHECK_THROWS(o.validate());
  o.patience = 9;
  CHECK_NOTHROW(o.validate());

  std::vector<Graph> one_class;
  one_class.emplace_back("g", 4, std::vector<Edge>{}, Matrix::Zero(4, 1), NodeLabels{{0, 0, 0, 0}}, 1);
  CHECK_THROWS(prepare_dataset(one_class, SplitSpec{}));
  std::vector<Graph> regression;
  for (int i = 0; i < 4; ++i) regression.emplace_back("r", 2, std::vector<Edge>{}, Matrix::Zero(2, 1), GraphLabel{0.5}, 2);
  CHECK_THROWS(prepare_dataset(regression, SplitSpec{}));
}

TEST_CASE("planted-shift split puts high-degree nodes in test") {
  SbmParams p;
  p.blocks = 2;
  p.nodes_per_block = 40;
  p.p_in = 0.2;
  p.p_out = 0.01;
  std::vector<Graph> g{synth_sbm(p)};
  SplitSpec split;
  split.mode = SplitMode::planted_shift;
  const Dataset d = prepare_dataset(std::move(g), split);
  const IndexList deg = d.full.edges.in_degree();
  Index max_train = 0, min_test = 1 << 30;
  for (Index i : d.split.train) max_train = std::max(max_train, deg[static_cast<std::size_t>(i)]);
  for (Index i : d.split.test) min_test = std::min(min_test, deg[static_cast<std::size_t>(i)]);
  CHECK(min_test >= max_train);
}
