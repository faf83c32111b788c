#include "gkd/bench.hpp"

#include "gkd/log.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <thread>

namespace gkd::bench {

using ad::Tensor;
using distill::AuxLoss;
using distill::ContrastLevel;
using distill::GspMetric;
using distill::HeadKind;
using distill::KernelKind;

std::vector<ContrastCell> contrast_grid() {
  return {
      {ContrastLevel::node, AuxLoss::gcrd, HeadKind::mlp},
      {ContrastLevel::node_samplewise, AuxLoss::gcrd, HeadKind::mlp},
      {ContrastLevel::global, AuxLoss::gcrd, HeadKind::mlp},
      {ContrastLevel::node, AuxLoss::crd, HeadKind::mlp},
      {ContrastLevel::node, AuxLoss::gcrd, HeadKind::gcn},
      {ContrastLevel::global, AuxLoss::crd, HeadKind::linear},
  };
}

std::vector<KernelCell> kernel_grid() {
  return {
      {KernelKind::euclidean, GspMetric::mse}, {KernelKind::linear, GspMetric::mse},
      {KernelKind::polynomial, GspMetric::mse}, {KernelKind::rbf, GspMetric::mse},
      {KernelKind::rbf, GspMetric::kl},
  };
}

std::string label(const ContrastCell& c) {
  return distill::to_string(c.loss) + "[level=" + distill::to_string(c.level) + ";head=" + distill::to_string(c.head) + "]";
}

std::string label(const KernelCell& c) {
  return "gsp[kernel=" + distill::to_string(c.kernel) + ";metric=" + distill::to_string(c.metric) + "]";
}

std::string display_name(const std::string& method) {
  static const std::map<std::string, std::string> names = {
      {"teacher", "Supervised Teacher"}, {"supervised", "Supervised Student"}, {"kd", "KD"}, {"fitnet", "FitNet"},
      {"at", "AT"}, {"lsp", "LSP"}, {"gsp", "GSP"}, {"crd", "CRD"}, {"gcrd", "G-CRD"}};
  if (const auto it = names.find(method); it != names.end()) return it->second;
  if (method.rfind("kd+", 0) == 0) return "KD + " + display_name(method.substr(3));
  return method;
}

namespace {

struct SeedContext {
  const config::RunConfig& config;
  const train::Dataset& data;
  std::uint64_t seed;
  std::vector<Record>& out;
};

void record_ok(SeedContext& ctx, const std::string& method, const std::string& split, const std::string& metric,
               double value) {
  ctx.out.push_back({method, ctx.seed, split, metric, value, {}});
}

std::string task_metric(const train::Dataset& data) {
  return data.task == Task::graph && data.num_classes == 2 ? "roc_auc" : "accuracy";
}

void record_fail(SeedContext& ctx, const std::string& method, const std::string& error) {
  ctx.out.push_back({method, ctx.seed, "test", task_metric(ctx.data), std::nullopt, error});
}

void record_eval(SeedContext& ctx, const std::string& method, const Model& model) {
  const Matrix logits = forward(model.frozen(), ctx.data.full, false).logits.value();
  const train::Evaluation valid = train::evaluate_logits(logits, ctx.data, ctx.data.split.valid);
  const train::Evaluation test = train::evaluate_logits(logits, ctx.data, ctx.data.split.test);
  record_ok(ctx, method, "valid", valid.metric, valid.value);
  record_ok(ctx, method, "test", test.metric, test.value);
}

// Top-1 teacher retrieval among validation units with the trained heads.
double head_retrieval(const Model& teacher, const train::DistillResult& run, const train::Dataset& data) {
  const Model student = run.student.frozen();
  distill::Objective objective = run.objective;
  const Tensor f_s = forward(student, data.full, false).embeddings;
  const Tensor f_t = forward(teacher, data.full, false).embeddings;
  auto normalize = [](Matrix m) {
    for (Index i = 0; i < m.rows(); ++i) {
      const double n = m.row(i).norm();
      if (n > 0) m.row(i) /= n;
    }
    return m;
  };
  IndexList rows = data.split.valid;
  Matrix u, v;
  if (run.objective.spec().contrast_level == ContrastLevel::global) {
    EdgeIndex isolated;
    isolated.num_nodes = data.full.num_graphs();
    const Tensor g_s = ad::segment_mean(f_s, data.full.node_to_graph, data.full.num_graphs());
    const Tensor g_t = ad::segment_mean(f_t, data.full.node_to_graph, data.full.num_graphs());
    u = objective.student_head().project(g_s, isolated, true).value();
    v = objective.teacher_head().project(g_t, isolated, true).value();
    if (data.task == Task::node) rows.clear();
  } else {
    u = objective.student_head().project(f_s, data.full.edges, true).value();
    v = objective.teacher_head().project(f_t, data.full.edges, true).value();
    if (data.task == Task::graph) {
      IndexList nodes;
      for (Index g : data.split.valid)
        for (Index i = 0; i < data.full.graph_size(g); ++i) nodes.push_back(data.full.offsets[static_cast<std::size_t>(g)] + i);
      rows = nodes;
    }
  }
  return distill::retrieval_accuracy(normalize(u), normalize(v), rows);
}

void run_distill(SeedContext& ctx, const Model& teacher, const std::string& name, const distill::DistillSpec& dspec,
                 int epochs) {
  const ModelSpec spec = config::model_spec(ctx.config.student, ctx.data);
  train::TrainOptions options = config::train_options(ctx.config, ctx.config.student, ctx.seed);
  if (epochs > 0) {
    options.epochs = epochs;
    options.patience = std::min(options.patience, epochs - 1);
  }
  try {
    if (dspec.method.is_supervised()) {
      record_eval(ctx, name, train::train_supervised(spec, ctx.data, options).model);
      return;
    }
    const train::DistillResult run = train::distill(teacher, spec, dspec, ctx.data, options);
    record_eval(ctx, name, run.student);
    if (dspec.method.aux == AuxLoss::gcrd || dspec.method.aux == AuxLoss::crd)
      record_ok(ctx, name, "valid", "retrieval", head_retrieval(teacher.frozen(), run, ctx.data));
  } catch (const std::exception& e) {
    log::warn("seed " + std::to_string(ctx.seed) + " " + name + ": " + e.what());
    record_fail(ctx, name, e.what());
  }
}

std::vector<Record> run_seed(const config::RunConfig& config, const train::Dataset& data, std::uint64_t seed,
                             const std::optional<Model>& loaded_teacher) {
  std::vector<Record> out;
  SeedContext ctx{config, data, seed, out};
  std::optional<Model> teacher = loaded_teacher;
  try {
    if (!teacher) {
      const ModelSpec spec = config::model_spec(config.teacher, data);
      teacher = train::train_supervised(spec, data, config::train_options(config, config.teacher, seed)).model;
    }
    record_eval(ctx, "teacher", *teacher);
  } catch (const std::exception& e) {
    log::warn("seed " + std::to_string(seed) + " teacher: " + e.what());
    record_fail(ctx, "teacher", e.what());
    for (const std::string& m : config.methods) record_fail(ctx, m, "teacher unavailable");
    return out;
  }
  for (const std::string& m : config.methods) {
    log::info("seed " + std::to_string(seed) + ": " + m);
    run_distill(ctx, *teacher, m, config::method_spec(config, m), 0);
  }
  if (config.ablation.contrast)
    for (const ContrastCell& c : contrast_grid()) {
      distill::DistillSpec spec = config::method_spec(config, distill::to_string(c.loss));
      spec.contrast_level = c.level;
      spec.head = c.head;
      run_distill(ctx, *teacher, label(c), spec, config.ablation.epochs);
    }
  if (config.ablation.kernel)
    for (const KernelCell& c : kernel_grid()) {
      distill::DistillSpec spec = config::method_spec(config, "gsp");
      spec.kernel.kind = c.kernel;
      spec.gsp_metric = c.metric;
      run_distill(ctx, *teacher, label(c), spec, config.ablation.epochs);
    }
  return out;
}

std::string percent(double v) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(2) << 100.0 * v;
  return o.str();
}

std::string cell_text(const Summary& s) {
  if (s.runs == 0) return "N.A.";
  return percent(s.mean) + " ±" + percent(s.stddev);
}

std::string pad(const std::string& s, std::size_t width) {
  // Column widths count code points so the arrows and ± line up.
  std::size_t cps = 0;
  for (unsigned char ch : s)
    if ((ch & 0xC0) != 0x80) ++cps;
  return s + std::string(width > cps ? width - cps : 0, ' ');
}

std::string params_text(const config::ModelConfig& m, const train::Dataset& data) {
  ModelSpec spec = config::model_spec(m, data);
  return to_string(spec.arch) + " " + std::to_string(spec.num_layers) + "L/" + std::to_string(spec.hidden) + " (" +
         std::to_string(count_params(Model(spec))) + " params)";
}

std::string render_main(const BenchResult& r, const config::RunConfig& config, const train::Dataset& data,
                        std::size_t seeds) {
  std::ostringstream o;
  o << "Desk-scale benchmark (metric: " << r.metric << " %, mean ±std over " << seeds << " seeds)\n";
  o << "Teacher: " << params_text(config.teacher, data) << "\n";
  o << "Student: " << params_text(config.student, data) << "\n";
  const Summary kd = r.summary("kd");
  const bool has_kd = std::find(config.methods.begin(), config.methods.end(), "kd") != config.methods.end() && kd.runs > 0;
  auto row = [&](const std::string& method, bool arrow) {
    const Summary s = r.summary(method);
    std::string text = cell_text(s);
    if (arrow && has_kd && s.runs > 0) text += s.mean > kd.mean ? " (↑)" : s.mean < kd.mean ? " (↓)" : " (=)";
    o << "  " << pad(display_name(method), 22) << "| " << text << "\n";
  };
  o << "  Sup.\n";
  row("teacher", false);
  bool distilled = false;
  for (const std::string& m : config.methods) {
    if (m != "supervised") continue;
    row(m, false);
  }
  for (const std::string& m : config.methods) {
    if (m == "supervised") continue;
    if (!distilled) o << "  Distillation\n";
    distilled = true;
    row(m, m != "kd");
  }
  return o.str();
}

std::string render_contrast(const BenchResult& r) {
  std::ostringstream o;
  o << "Ablation: contrast level x loss x projection (metric: " << r.metric << " %)\n";
  o << "  " << pad("Repr.", 16) << pad("Loss", 8) << pad("Proj.", 8) << "| Student\n";
  auto row = [&](const ContrastCell& c) {
    const std::string level = c.level == ContrastLevel::node              ? "Nodes"
                              : c.level == ContrastLevel::node_samplewise ? "Nodes (s.w.)"
                                                                          : "Global";
    const std::string loss = c.loss == AuxLoss::gcrd ? "G-CRD" : "CRD";
    const std::string head = c.head == HeadKind::mlp ? "MLP" : c.head == HeadKind::gcn ? "GCN" : "Lin.";
    o << "  " << pad(level, 16) << pad(loss, 8) << pad(head, 8) << "| " << cell_text(r.summary(label(c))) << "\n";
  };
  const auto g = contrast_grid();
  row(g[0]), row(g[1]), row(g[2]);
  o << "  --\n";
  row(g[0]), row(g[3]);
  o << "  --\n";
  row(g[4]), row(g[0]);
  o << "  --\n";
  o << "  " << pad("Full G-CRD (Nodes, GCN)", 32) << "| " << cell_text(r.summary(label(g[4]))) << "\n";
  o << "  " << pad("Full CRD (Global, Lin.)", 32) << "| " << cell_text(r.summary(label(g[5]))) << "\n";
  return o.str();
}

std::string render_kernel(const BenchResult& r) {
  std::ostringstream o;
  o << "Ablation: GSP kernel x metric (metric: " << r.metric << " %)\n";
  o << "  " << pad("Kernel", 12) << pad("Metric", 8) << "| Student\n";
  auto row = [&](const KernelCell& c) {
    std::string k = distill::to_string(c.kernel);
    k[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(k[0])));
    if (c.kernel == KernelKind::rbf) k = "RBF";
    o << "  " << pad(k, 12) << pad(c.metric == GspMetric::mse ? "MSE" : "KL-div.", 8) << "| "
      << cell_text(r.summary(label(c))) << "\n";
  };
  const auto g = kernel_grid();
  for (std::size_t i = 0; i < 4; ++i) row(g[i]);
  o << "  --\n";
  row(g[4]), row(g[3]);
  return o.str();
}

}  // namespace

Summary BenchResult::summary(const std::string& method) const {
  Summary s;
  s.method = method;
  std::vector<double> values;
  for (const Record& r : records)
    if (r.method == method && r.split == "test" && r.value && r.metric == metric) values.push_back(*r.value);
  s.runs = values.size();
  if (values.empty()) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

std::optional<double> BenchResult::mean(const std::string& method, const std::string& split,
                                        const std::string& metric_name) const {
  double sum = 0;
  std::size_t n = 0;
  for (const Record& r : records)
    if (r.method == method && r.split == split && r.metric == metric_name && r.value) {
      sum += *r.value;
      ++n;
    }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

BenchResult run_benchmark(const config::RunConfig& config, std::uint64_t base_seed) {
  config.validate();
  const train::Dataset data = train::prepare_dataset(config::load_graphs(config.dataset), config.dataset.split);
  std::optional<Model> teacher;
  if (!config.teacher.checkpoint.empty())
    teacher = load_checkpoint(config.teacher.checkpoint, config::model_spec(config.teacher, data));

  const std::size_t n = config.seeds.size();
  std::vector<std::vector<Record>> per_seed(n);
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(config.threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) per_seed[i] = run_seed(config, data, base_seed + config.seeds[i], teacher);
  } else {
    // Seeds are independent; each worker takes every `workers`-th seed and
    // results are merged in seed order, so output does not depend on timing.
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) per_seed[i] = run_seed(config, data, base_seed + config.seeds[i], teacher);
      });
    for (std::thread& t : pool) t.join();
  }

  BenchResult result;
  for (auto& part : per_seed) result.records.insert(result.records.end(), part.begin(), part.end());
  result.metric = task_metric(data);
  result.table = render_main(result, config, data, n);
  if (config.ablation.contrast) result.contrast_table = render_contrast(result);
  if (config.ablation.kernel) result.kernel_table = render_kernel(result);
  return result;
}

void write_csv(std::ostream& out, const std::vector<Record>& records) {
  out << "method,seed,split,metric,value\n";
  for (const Record& r : records)
    out << r.method << ',' << r.seed << ',' << r.split << ',' << r.metric << ',' << (r.value ? format_real(*r.value) : "NA")
        << '\n';
}

}  // namespace gkd::bench
