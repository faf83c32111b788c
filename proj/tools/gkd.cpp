// gkd: data generation, training, distillation, benchmarking and analysis.
//
// Exit codes: 0 success, 1 computational failure, 2 usage error.

#include "gkd/bench.hpp"
#include "gkd/config.hpp"
#include "gkd/gradsuite.hpp"
#include "gkd/log.hpp"
#include "gkd/runtime.hpp"
#include "gkd/simrep.hpp"
#include "gkd/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;
using namespace gkd;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Shared options

struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string data;  // manifest path; replaces the configured dataset

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Run configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--override", overrides, "section.key=value, repeatable");
  }
  void add_data(CLI::App* cmd) {
    cmd->add_option("--data", data, "Dataset manifest (default: the configured dataset)")->check(CLI::ExistingFile);
  }

  config::RunConfig load() const {
    config::RunConfig c = config_path.empty() ? config::default_config() : config::load_config(config_path);
    for (const std::string& o : overrides) config::apply_override(c, o);
    if (!data.empty()) {
      c.dataset.kind = "manifest";
      c.dataset.manifest = data;
    }
    return c;
  }
};

train::Dataset load_data(const config::RunConfig& c) {
  return train::prepare_dataset(config::load_graphs(c.dataset), c.dataset.split);
}

// Node rows of the validation units: the units themselves for node tasks,
// every node of the validation graphs for graph tasks.
IndexList analysis_rows(const train::Dataset& data, const std::string& part) {
  IndexList units;
  if (part == "valid") units = data.split.valid;
  else if (part == "test") units = data.split.test;
  else if (part == "train") units = data.split.train;
  else return {};
  if (data.task == Task::node) return units;
  IndexList rows;
  for (Index g : units)
    for (Index i = 0; i < data.full.graph_size(g); ++i) rows.push_back(data.full.offsets[static_cast<std::size_t>(g)] + i);
  return rows;
}

void print_eval(const std::string& who, const Model& model, const train::Dataset& data) {
  const Matrix logits = forward(model.frozen(), data.full, false).logits.value();
  for (const auto& [name, rows] : {std::pair<const char*, const IndexList*>{"train", &data.split.train},
                                   {"valid", &data.split.valid},
                                   {"test", &data.split.test}}) {
    const train::Evaluation ev = train::evaluate_logits(logits, data, *rows);
    std::cout << who << ' ' << name << ' ' << ev.metric << ' ' << std::fixed << std::setprecision(4) << ev.value
              << " loss " << ev.loss << '\n';
  }
  std::cout.unsetf(std::ios::floatfield);
}

void maybe_export(const std::string& path, const Model& model, const train::Dataset& data, const std::string& tag) {
  if (path.empty()) return;
  simrep::write_embeddings(simrep::extract_embeddings(model, data.full, analysis_rows(data, "valid"), tag), path);
  log::info("wrote embeddings to " + path);
}

// ---------------------------------------------------------------------------
// gen-data

struct GenData {
  std::string kind;
  std::string out;
  std::uint64_t seed = 0;
  SbmParams sbm;
  MolParams mol;

  void add(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset (graph files and a manifest)");
    cmd->add_option("kind", kind, "sbm or mol")->required()->check(CLI::IsMember({"sbm", "mol"}));
    cmd->add_option("--out", out, "Output directory")->required();
    cmd->add_option("--seed", seed, "Generator seed");
    cmd->add_option("--blocks", sbm.blocks, "sbm: number of blocks")->capture_default_str();
    cmd->add_option("--nodes-per-block", sbm.nodes_per_block, "sbm: nodes per block")->capture_default_str();
    cmd->add_option("--p-in", sbm.p_in, "sbm: within-block edge probability")->capture_default_str();
    cmd->add_option("--p-out", sbm.p_out, "sbm: between-block edge probability")->capture_default_str();
    cmd->add_option("--d-in", sbm.d_in, "sbm: feature width")->capture_default_str();
    cmd->add_option("--noise", sbm.noise, "sbm: feature noise scale")->capture_default_str();
    cmd->add_option("--count", mol.count, "mol: number of graphs")->capture_default_str();
    cmd->add_option("--min-n", mol.min_n, "mol: minimum nodes per graph")->capture_default_str();
    cmd->add_option("--max-n", mol.max_n, "mol: maximum nodes per graph")->capture_default_str();
    cmd->add_option("--classes", mol.num_classes, "mol: number of classes")->capture_default_str();
    cmd->callback([this] { run(); });
  }

  void run() {
    std::vector<Graph> graphs;
    if (kind == "sbm") {
      sbm.seed = seed;
      graphs.push_back(synth_sbm(sbm));
    } else {
      mol.seed = seed;
      graphs = synth_molgraphs(mol);
    }
    fs::create_directories(out);
    std::vector<fs::path> entries;
    const int width = graphs.size() > 1 ? static_cast<int>(std::to_string(graphs.size() - 1).size()) : 0;
    for (std::size_t i = 0; i < graphs.size(); ++i) {
      std::ostringstream name;
      name << kind;
      if (graphs.size() > 1) name << '_' << std::setw(std::max(4, width)) << std::setfill('0') << i;
      name << ".graph";
      save_graph(graphs[i], fs::path(out) / name.str());
      entries.emplace_back(name.str());
    }
    write_manifest(fs::path(out) / "manifest.txt", entries);
    print_stats(graphs);
  }

  static void print_stats(const std::vector<Graph>& graphs) {
    Index nodes = 0, edges = 0;
    std::map<int, Index> label_counts;
    for (const Graph& g : graphs) {
      nodes += g.num_nodes();
      edges += static_cast<Index>(g.edges().size());
      if (g.label_kind() == LabelKind::node)
        for (int y : g.node_labels()) ++label_counts[y];
      else
        ++label_counts[static_cast<int>(g.graph_label())];
    }
    const double n = static_cast<double>(graphs.size());
    std::cout << "graphs          " << graphs.size() << '\n'
              << "nodes (total)   " << nodes << '\n'
              << "nodes (avg)     " << std::fixed << std::setprecision(2) << static_cast<double>(nodes) / n << '\n'
              << "edges (avg)     " << static_cast<double>(edges) / n << '\n'
              << "avg degree      " << static_cast<double>(edges) / static_cast<double>(nodes) << '\n'
              << "feature dim     " << graphs.front().feature_dim() << '\n'
              << "classes         " << graphs.front().num_classes() << '\n'
              << "task            " << (graphs.front().label_kind() == LabelKind::node ? "node" : "graph") << '\n';
    std::cout << "label counts   ";
    for (const auto& [y, c] : label_counts) std::cout << ' ' << y << ':' << c;
    std::cout << '\n';
    std::cout.unsetf(std::ios::floatfield);
  }
};

// ---------------------------------------------------------------------------
// train-teacher

struct TrainTeacher {
  ConfigOptions cfg;
  std::string out;
  std::string embeddings;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("train-teacher", "Train a model with the [teacher] settings and save a checkpoint");
    cfg.add_to(cmd);
    cfg.add_data(cmd);
    cmd->add_option("--out", out, "Checkpoint path")->required();
    cmd->add_option("--seed", seed, "Run seed (initialization, dropout)");
    cmd->add_option("--embeddings", embeddings, "Also export validation embeddings here");
    cmd->callback([this] { run(); });
  }

  void run() {
    const config::RunConfig c = cfg.load();
    const train::Dataset data = load_data(c);
    const train::TrainResult r =
        train::train_supervised(config::model_spec(c.teacher, data), data, config::train_options(c, c.teacher, seed));
    save_checkpoint(r.model, out);
    std::cout << "best epoch " << r.history.best_epoch << " of " << r.history.epochs.size() << '\n';
    print_eval("teacher", r.model, data);
    maybe_export(embeddings, r.model, data, "teacher");
  }
};

// ---------------------------------------------------------------------------
// distill

struct Distill {
  ConfigOptions cfg;
  std::string teacher;
  std::string method;
  std::string out;
  std::string embeddings;
  std::uint64_t seed = 0;

  void add(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("distill", "Train a student against a teacher checkpoint");
    cfg.add_to(cmd);
    cfg.add_data(cmd);
    cmd->add_option("--teacher", teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
    cmd->add_option("--method", method, "supervised, kd, fitnet, at, lsp, gsp, crd, gcrd or kd+<aux>")->required();
    cmd->add_option("--out", out, "Student checkpoint path")->required();
    cmd->add_option("--seed", seed, "Run seed (initialization, dropout, sampling)");
    cmd->add_option("--embeddings", embeddings, "Also export validation embeddings here");
    cmd->callback([this] { run(); });
  }

  void run() {
    try {
      distill::parse_method(method);
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    const config::RunConfig c = cfg.load();
    const train::Dataset data = load_data(c);
    const Model t = load_checkpoint(teacher);
    const distill::DistillSpec spec = config::method_spec(c, method);
    const ModelSpec student_spec = config::model_spec(c.student, data);
    const train::TrainOptions options = config::train_options(c, c.student, seed);
    Model student = spec.method.is_supervised() ? train::train_supervised(student_spec, data, options).model
                                                : train::distill(t, student_spec, spec, data, options).student;
    save_checkpoint(student, out);
    print_eval("teacher", t, data);
    print_eval(method, student, data);
    maybe_export(embeddings, student, data, method);
  }
};

// ---------------------------------------------------------------------------
// bench

struct Bench {
  ConfigOptions cfg;
  std::optional<std::uint64_t> seed;
  std::string csv;
  std::string ablation = "none";
  int threads = 0;

  void add(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("bench", "Multi-seed benchmark: teacher, supervised student, each method");
    cfg.add_to(cmd);
    cmd->add_option("--seed", seed, "Base seed added to every run.seeds entry")->required();
    cmd->add_option("--csv", csv, "Write per-run CSV here (default: standard output)");
    cmd->add_option("--ablation", ablation, "none, contrast, kernel or all")
        ->check(CLI::IsMember({"none", "contrast", "kernel", "all"}))
        ->capture_default_str();
    cmd->add_option("--threads", threads, "Worker threads over seeds (default: run.threads)");
    cmd->callback([this] { run(); });
  }

  void run() {
    config::RunConfig c = cfg.load();
    if (ablation == "contrast" || ablation == "all") c.ablation.contrast = true;
    if (ablation == "kernel" || ablation == "all") c.ablation.kernel = true;
    if (threads > 0) c.threads = threads;
    const bench::BenchResult r = bench::run_benchmark(c, *seed);
    if (csv.empty()) {
      bench::write_csv(std::cout, r.records);
      std::cout << '\n';
    } else {
      std::ofstream f(csv);
      if (!f) throw std::runtime_error("cannot write " + csv);
      bench::write_csv(f, r.records);
    }
    std::cout << r.table;
    if (!r.contrast_table.empty()) std::cout << '\n' << r.contrast_table;
    if (!r.kernel_table.empty()) std::cout << '\n' << r.kernel_table;
  }
};

// ---------------------------------------------------------------------------
// analyze

struct Analyze {
  ConfigOptions cfg;
  std::string teacher;
  std::vector<std::string> students;
  std::vector<std::string> embedding_files;
  std::string edges;
  std::string split = "valid";
  std::string out;

  void add(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("analyze", "CKA and Mantel similarity of student embeddings to the teacher's");
    cfg.add_to(cmd);
    cfg.add_data(cmd);
    auto* t = cmd->add_option("--teacher", teacher, "Teacher checkpoint")->check(CLI::ExistingFile);
    cmd->add_option("--students", students, "Student checkpoints")->check(CLI::ExistingFile)->needs(t);
    auto* e = cmd->add_option("--embeddings", embedding_files, "Embedding files: teacher first, then students")
                  ->check(CLI::ExistingFile)
                  ->excludes(t);
    cmd->add_option("--edges", edges, "Edge list over node ids (with --embeddings)")->check(CLI::ExistingFile)->needs(e);
    cmd->add_option("--split", split, "Rows analysed with checkpoints: train, valid, test or all")
        ->check(CLI::IsMember({"train", "valid", "test", "all"}))
        ->capture_default_str();
    cmd->add_option("--out", out, "CSV path (default: standard output)");
    cmd->callback([this] { run(); });
  }

  void run() {
    std::vector<simrep::SimilarityRow> rows;
    if (!embedding_files.empty()) {
      if (edges.empty()) throw UsageError("--embeddings requires --edges");
      const simrep::EmbeddingSet t = simrep::read_embeddings(embedding_files.front());
      std::vector<simrep::EmbeddingSet> sets;
      for (std::size_t i = 1; i < embedding_files.size(); ++i) sets.push_back(simrep::read_embeddings(embedding_files[i]));
      rows = simrep::similarity_report(t, sets, simrep::read_edge_list(edges, t.node_ids));
    } else {
      if (teacher.empty()) throw UsageError("either --teacher or --embeddings is required");
      const config::RunConfig c = cfg.load();
      const train::Dataset data = load_data(c);
      const Model t = load_checkpoint(teacher);
      std::vector<std::pair<std::string, Model>> models;
      for (const std::string& s : students) {
        try {
          models.emplace_back(s, load_checkpoint(s));
        } catch (const std::exception& e) {
          throw std::runtime_error(s + ": " + e.what());
        }
      }
      // Reject width mismatches before any forward pass, naming the file.
      if (t.spec().in_dim != data.feature_dim()) throw std::runtime_error(teacher + ": input width does not match the data");
      for (const auto& [name, m] : models)
        if (m.spec().in_dim != data.feature_dim()) throw std::runtime_error(name + ": input width does not match the data");
      rows = simrep::similarity_report(t, models, data.full, analysis_rows(data, split));
    }
    if (out.empty()) {
      simrep::write_report_csv(std::cout, rows);
    } else {
      std::ofstream f(out);
      if (!f) throw std::runtime_error("cannot write " + out);
      simrep::write_report_csv(f, rows);
    }
  }
};

// ---------------------------------------------------------------------------
// gradcheck

struct GradCheck {
  bool all = false;
  std::string loss;
  std::optional<std::uint64_t> seed;
  int instances = 10;
  bool sabotage = false;
  int status = kOk;

  void add(CLI::App& app) {
    CLI::App* cmd = app.add_subcommand("gradcheck", "Finite-difference check of every loss and layer gradient");
    auto* a = cmd->add_flag("--all", all, "Check every registered loss and layer");
    auto* l = cmd->add_option("--loss", loss, "Check one item (kd, fitnet, at, lsp, gsp, crd, gcrd, layers)");
    a->excludes(l);
    cmd->add_option("--seed", seed, "Seed for the random instances")->required();
    cmd->add_option("--instances", instances, "Random instances per variant")->check(CLI::PositiveNumber)->capture_default_str();
    cmd->add_flag("--sabotage", sabotage)->group("");  // negative control: registers a wrong backward rule
    cmd->callback([this] { run(); });
  }

  void run() {
    if (!all && loss.empty()) throw UsageError("gradcheck needs --all or --loss <name>");
    const std::vector<gradsuite::Item> items = gradsuite::registry(sabotage);
    std::vector<const gradsuite::Item*> selected;
    for (const auto& item : items)
      if (all || item.name == loss) selected.push_back(&item);
    if (selected.empty()) {
      std::string names;
      for (const auto& item : items) names += " " + item.name;
      throw UsageError("unknown --loss '" + loss + "'; known:" + names);
    }
    for (const gradsuite::Item* item : selected) {
      const gradsuite::Report r = gradsuite::run(*item, *seed, instances);
      std::cout << (r.passed ? "ok   " : "FAIL ") << std::left << std::setw(10) << r.name << " checks=" << std::setw(4)
                << r.checks << " max_rel_error=" << std::scientific << std::setprecision(3) << r.max_rel_error;
      std::cout.unsetf(std::ios::floatfield);
      if (!r.passed) std::cout << "  worst: " << r.worst;
      std::cout << '\n';
      if (!r.passed) status = kFailure;
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  gkd::tune_allocator();
  CLI::App app{"gkd: knowledge distillation for graph neural networks"};
  app.require_subcommand(1);
  std::string level = "info";
  app.add_option("--log-level", level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}))
      ->capture_default_str();

  GenData gen;
  TrainTeacher teacher;
  Distill dist;
  Bench bench;
  Analyze analyze;
  GradCheck grad;
  gen.add(app);
  teacher.add(app);
  dist.add(app);
  bench.add(app);
  analyze.add(app);
  grad.add(app);

  app.parse_complete_callback([&] {
    static const std::map<std::string, log::Level> levels = {{"debug", log::Level::debug}, {"info", log::Level::info},
                                                             {"warn", log::Level::warn},   {"error", log::Level::error},
                                                             {"off", log::Level::off}};
    log::set_level(levels.at(level));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return grad.status;
}
