#include "gkd/gradsuite.hpp"

#include "gkd/distill.hpp"
#include "gkd/gnn.hpp"
#include "gkd/graph.hpp"
#include "gkd/random.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace gkd::gradsuite {

using ad::GradCheckResult;
using ad::Tensor;
using namespace distill;

namespace {

Matrix normal(Index r, Index c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * standard_normal(rng);
  return m;
}

// Random symmetric graph on n nodes with roughly `avg_deg` neighbours each.
EdgeIndex random_edges(Index n, double avg_deg, Rng& rng) {
  std::set<std::pair<Index, Index>> pairs;
  const double p = std::min(1.0, avg_deg / static_cast<double>(std::max<Index>(1, n - 1)));
  for (Index i = 0; i < n; ++i)
    for (Index j = i + 1; j < n; ++j)
      if (uniform01(rng) < p) {
        pairs.emplace(i, j);
        pairs.emplace(j, i);
      }
  EdgeIndex e;
  e.num_nodes = n;
  for (const auto& [s, d] : pairs) {
    e.src.push_back(s);
    e.dst.push_back(d);
  }
  return e;
}

Graph random_graph(const std::string& id, Index n, Index d, Rng& rng) {
  const EdgeIndex e = random_edges(n, 2.5, rng);
  std::vector<Edge> edges;
  for (Index k = 0; k < e.num_edges(); ++k) edges.push_back({e.src[static_cast<std::size_t>(k)], e.dst[static_cast<std::size_t>(k)]});
  return Graph(id, n, std::move(edges), normal(n, d, rng), NodeLabels{std::vector<int>(static_cast<std::size_t>(n), 0)}, 2);
}

// Three small graphs, so samplewise and global contrast have several members.
Batch random_batch(Index d, Rng& rng) {
  std::vector<Graph> graphs;
  for (int g = 0; g < 3; ++g)
    graphs.push_back(random_graph("g" + std::to_string(g), 3 + static_cast<Index>(uniform_index(rng, 4)), d, rng));
  return make_batch(graphs);
}

std::vector<Tensor> with(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

Kernel kernel_of(KernelKind k) {
  Kernel kernel;
  kernel.kind = k;
  kernel.c = 1.0;
  kernel.degree = 2;
  kernel.sigma = 1.0;
  return kernel;
}

const std::vector<KernelKind> kKernels = {KernelKind::euclidean, KernelKind::linear, KernelKind::polynomial,
                                          KernelKind::rbf};

Item loss_items_kd() {
  return {"kd", {{"kd", [](std::uint64_t seed) {
                    Rng rng = make_rng(seed, "kd");
                    const Tensor zs = Tensor::parameter(normal(6, 4, rng));
                    const Tensor zt = Tensor::constant(normal(6, 4, rng));
                    const double tau = 1.0 + static_cast<double>(uniform_index(rng, 4));
                    return ad::grad_check([&] { return kd_loss(zs, zt, tau); }, {zs}, kEps);
                  }}}};
}

Item loss_items_fitnet() {
  return {"fitnet", {{"linear-heads", [](std::uint64_t seed) {
                        Rng rng = make_rng(seed, "fitnet");
                        const Tensor fs = Tensor::parameter(normal(8, 5, rng));
                        const Tensor ft = Tensor::constant(normal(8, 7, rng));
                        ProjectionHead ps(HeadKind::linear, 5, 4, rng), pt(HeadKind::linear, 7, 4, rng);
                        const EdgeIndex e = random_edges(8, 2.0, rng);
                        return ad::grad_check([&] { return fitnet_loss(fs, ft, ps, pt, e); },
                                              with(with({fs}, ps.parameters()), pt.parameters()), kEps);
                      }}}};
}

Item loss_items_at() {
  return {"at", {{"at", [](std::uint64_t seed) {
                    Rng rng = make_rng(seed, "at");
                    const Tensor fs = Tensor::parameter(normal(9, 5, rng));
                    const Tensor ft = Tensor::constant(normal(9, 7, rng));
                    return ad::grad_check([&] { return at_loss(fs, ft); }, {fs}, kEps);
                  }}}};
}

Item loss_items_lsp() {
  Item item{"lsp", {}};
  for (KernelKind k : kKernels)
    for (bool reverse : {false, true})
      item.variants.push_back({to_string(k) + (reverse ? "-reverse" : ""), [k, reverse](std::uint64_t seed) {
                                 Rng rng = make_rng(seed, "lsp");
                                 const Index n = 10;
                                 // Small feature scale keeps euclidean/polynomial logits moderate.
                                 const Tensor fs = Tensor::parameter(normal(n, 4, rng, 0.5));
                                 const Tensor ft = Tensor::constant(normal(n, 6, rng, 0.5));
                                 const EdgeIndex e = random_edges(n, 3.0, rng);
                                 const Kernel kernel = kernel_of(k);
                                 return ad::grad_check([&] { return lsp_loss(fs, ft, e, kernel, reverse); }, {fs}, kEps);
                               }});
  return item;
}

Item loss_items_gsp() {
  Item item{"gsp", {}};
  for (GspMetric metric : {GspMetric::mse, GspMetric::kl})
    for (KernelKind k : kKernels)
      item.variants.push_back({to_string(metric) + "-" + to_string(k), [metric, k](std::uint64_t seed) {
                                 Rng rng = make_rng(seed, "gsp");
                                 const Index n = 12;
                                 const Tensor fs = Tensor::parameter(normal(n, 4, rng, 0.5));
                                 const Tensor ft = Tensor::constant(normal(n, 6, rng, 0.5));
                                 const Index cap = seed % 2 == 0 ? 8 : 512;  // alternate the subsampled path
                                 const Kernel kernel = kernel_of(k);
                                 return ad::grad_check([&] { return gsp_loss(fs, ft, kernel, metric, cap, seed); }, {fs},
                                                       kEps);
                               }});
  return item;
}

const std::vector<ContrastLevel> kLevels = {ContrastLevel::node, ContrastLevel::node_samplewise, ContrastLevel::global};

Item contrast_item(const std::string& name, AuxLoss loss, const std::vector<HeadKind>& heads) {
  Item item{name, {}};
  for (HeadKind h : heads)
    for (ContrastLevel level : kLevels)
      item.variants.push_back({to_string(h) + "-" + to_string(level), [loss, h, level](std::uint64_t seed) {
                                 Rng rng = make_rng(seed, "contrast");
                                 const Batch batch = random_batch(3, rng);
                                 const Index n = batch.num_nodes();
                                 const Index dt = h == HeadKind::identity ? 5 : 7;
                                 const Tensor fs = Tensor::parameter(normal(n, 5, rng));
                                 const Tensor ft = Tensor::constant(normal(n, dt, rng));
                                 ProjectionHead ps(h, 5, 4, rng), pt(h, dt, 4, rng);
                                 const double tau = 0.5;
                                 auto f = [&] {
                                   return loss == AuxLoss::gcrd ? gcrd_loss(fs, ft, ps, pt, tau, batch, level)
                                                                : crd_loss(fs, ft, ps, pt, tau, batch, level);
                                 };
                                 return ad::grad_check(f, with(with({fs}, ps.parameters()), pt.parameters()), kEps);
                               }});
  return item;
}

Item layer_items() {
  Item item{"layers", {}};
  item.variants.push_back({"linear", [](std::uint64_t seed) {
                             Rng rng = make_rng(seed, "linear");
                             const Tensor x = Tensor::parameter(normal(6, 4, rng));
                             const Linear lin = make_linear(4, 3, true, rng);
                             const Matrix r = normal(6, 3, rng);
                             return ad::grad_check(
                                 [&] { return ad::reduce_sum(ad::elementwise_mul(apply(lin, x), Tensor::constant(r))); },
                                 {x, lin.weight, lin.bias}, kEps);
                           }});
  item.variants.push_back({"gcn", [](std::uint64_t seed) {
                             Rng rng = make_rng(seed, "gcn");
                             const EdgeIndex e = random_edges(8, 2.5, rng);
                             const Tensor x = Tensor::parameter(normal(8, 4, rng));
                             const Linear lin = make_linear(4, 3, true, rng);
                             const Matrix r = normal(8, 3, rng);
                             return ad::grad_check(
                                 [&] {
                                   return ad::reduce_sum(ad::elementwise_mul(gcn_layer(x, e, lin), Tensor::constant(r)));
                                 },
                                 {x, lin.weight, lin.bias}, kEps);
                           }});
  item.variants.push_back({"gin", [](std::uint64_t seed) {
                             Rng rng = make_rng(seed, "gin");
                             const EdgeIndex e = random_edges(8, 2.5, rng);
                             const Tensor x = Tensor::parameter(normal(8, 4, rng));
                             const Linear a = make_linear(4, 5, true, rng), b = make_linear(5, 3, true, rng);
                             const Tensor eps = Tensor::parameter(Matrix::Constant(1, 1, 0.1 * standard_normal(rng)));
                             const Matrix r = normal(8, 3, rng);
                             return ad::grad_check(
                                 [&] {
                                   return ad::reduce_sum(
                                       ad::elementwise_mul(gin_layer(x, e, a, b, eps), Tensor::constant(r)));
                                 },
                                 {x, a.weight, a.bias, b.weight, b.bias, eps}, kEps);
                           }});
  item.variants.push_back({"sage", [](std::uint64_t seed) {
                             Rng rng = make_rng(seed, "sage");
                             const EdgeIndex e = random_edges(8, 2.5, rng);
                             const Tensor x = Tensor::parameter(normal(8, 4, rng));
                             const Linear lin = make_linear(8, 3, true, rng);
                             const Matrix r = normal(8, 3, rng);
                             return ad::grad_check(
                                 [&] {
                                   return ad::reduce_sum(ad::elementwise_mul(sage_layer(x, e, lin), Tensor::constant(r)));
                                 },
                                 {x, lin.weight, lin.bias}, kEps);
                           }});
  for (Pool pool : {Pool::mean, Pool::sum})
    item.variants.push_back({"pool-" + to_string(pool), [pool](std::uint64_t seed) {
                               Rng rng = make_rng(seed, "pool");
                               const Batch batch = random_batch(3, rng);
                               const Tensor x = Tensor::parameter(normal(batch.num_nodes(), 3, rng));
                               const Matrix r = normal(batch.num_graphs(), 3, rng);
                               return ad::grad_check(
                                   [&] {
                                     return ad::reduce_sum(
                                         ad::elementwise_mul(pool_nodes(x, batch, pool), Tensor::constant(r)));
                                   },
                                   {x}, kEps);
                             }});
  for (HeadKind h : {HeadKind::mlp, HeadKind::gcn})
    item.variants.push_back({"head-" + to_string(h), [h](std::uint64_t seed) {
                               Rng rng = make_rng(seed, "head");
                               const EdgeIndex e = random_edges(9, 2.5, rng);
                               const Tensor x = Tensor::parameter(normal(9, 4, rng));
                               ProjectionHead head(h, 4, 3, rng);
                               const Matrix r = normal(9, 3, rng);
                               return ad::grad_check(
                                   [&] {
                                     return ad::reduce_sum(ad::elementwise_mul(head.project(x, e), Tensor::constant(r)));
                                   },
                                   with({x}, head.parameters()), kEps);
                             }});
  for (Arch arch : {Arch::gcn, Arch::gin, Arch::sage, Arch::mlp})
    for (Task task : {Task::node, Task::graph})
      item.variants.push_back({"model-" + to_string(arch) + "-" + to_string(task), [arch, task](std::uint64_t seed) {
                                 Rng rng = make_rng(seed, "model");
                                 const Batch batch = random_batch(3, rng);
                                 ModelSpec spec;
                                 spec.arch = arch;
                                 spec.num_layers = 2;
                                 spec.hidden = 4;
                                 spec.in_dim = 3;
                                 spec.num_classes = 3;
                                 spec.task = task;
                                 if (task == Task::graph) spec.pool = Pool::mean;
                                 spec.seed = seed;
                                 const Model model(spec);
                                 // Zero-initialized biases can land activations exactly on a relu kink.
                                 for (Tensor t : model.parameter_tensors())
                                   t.leaf_value() += normal(t.rows(), t.cols(), rng, 0.1);
                                 const Index rows = task == Task::node ? batch.num_nodes() : batch.num_graphs();
                                 const Matrix r = normal(rows, 3, rng);
                                 return ad::grad_check(
                                     [&] {
                                       return ad::reduce_sum(ad::elementwise_mul(forward(model, batch, false).logits,
                                                                                 Tensor::constant(r)));
                                     },
                                     model.parameter_tensors(), kEps);
                               }});
  return item;
}

}  // namespace

Tensor sabotaged_square(const Tensor& x) {
  Matrix out = x.value().array().square();
  return Tensor::record(std::move(out), {x}, "sabotaged_square", [](const Matrix& g, const std::vector<Tensor>& in) {
    if (in[0].requires_grad()) in[0].accumulate_grad(Matrix(3.0 * in[0].value().array() * g.array()));
  });
}

std::vector<Item> registry(bool with_sabotage) {
  std::vector<Item> items = {
      loss_items_kd(),
      loss_items_fitnet(),
      loss_items_at(),
      loss_items_lsp(),
      loss_items_gsp(),
      contrast_item("crd", AuxLoss::crd, {HeadKind::mlp, HeadKind::gcn, HeadKind::linear}),
      contrast_item("gcrd", AuxLoss::gcrd, {HeadKind::mlp, HeadKind::gcn, HeadKind::identity}),
      layer_items(),
  };
  if (with_sabotage)
    items.push_back({"sabotaged_square", {{"sabotaged_square", [](std::uint64_t seed) {
                                             Rng rng = make_rng(seed, "sabotage");
                                             const Tensor x = Tensor::parameter(normal(4, 3, rng));
                                             return ad::grad_check([&] { return ad::reduce_sum(sabotaged_square(x)); },
                                                                   {x}, kEps);
                                           }}}});
  return items;
}

Report run(const Item& item, std::uint64_t seed, int instances, double tol) {
  Report report;
  report.name = item.name;
  report.max_rel_error = 0;
  for (const Variant& v : item.variants)
    for (int i = 0; i < instances; ++i) {
      const std::uint64_t s = derive_seed(derive_seed(seed, item.name + "/" + v.name), std::to_string(i));
      GradCheckResult r;
      try {
        r = v.check(s);
      } catch (const std::exception& e) {
        r.finite = false;
        r.message = e.what();
      }
      ++report.checks;
      const bool worse = !r.finite ? report.finite : r.max_rel_error > report.max_rel_error && report.finite;
      if (worse || report.worst.empty()) {
        std::ostringstream where;
        where << v.name << " instance " << i << " param " << r.param << " (" << r.row << "," << r.col << ")";
        if (!r.message.empty()) where << ": " << r.message;
        report.worst = where.str();
      }
      if (!r.finite) report.finite = false;
      report.max_rel_error = std::max(report.max_rel_error, r.finite ? r.max_rel_error : INFINITY);
    }
  report.passed = report.finite && report.max_rel_error < tol;
  return report;
}

}  // namespace gkd::gradsuite
