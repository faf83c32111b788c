#pragma once

// Run configuration: an INI-style file of [section] blocks with key = value
// lines. '#' and ';' start comments. Sections:
//   [dataset]        kind (sbm|mol|manifest), manifest, split, generator params
//   [teacher]        arch, layers, hidden, dropout, pool, lr, checkpoint
//   [student]        arch, layers, hidden, dropout, pool, lr
//   [distill]        DistillSpec fields
//   [method.<name>]  DistillSpec fields applied only to that method
//   [optim]          kind, weight_decay, beta1, beta2, eps
//   [run]            epochs, patience, batch_size, seeds, methods, threads
//   [ablation]       contrast, kernel (booleans), epochs

#include "gkd/distill.hpp"
#include "gkd/gnn.hpp"
#include "gkd/graph.hpp"
#include "gkd/train.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace gkd::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DatasetConfig {
  std::string kind = "sbm";  // sbm | mol | manifest
  std::filesystem::path manifest;
  SbmParams sbm;
  MolParams mol;
  // Label-scarce by default: few training labels, most nodes held out.
  SplitSpec split{0.1, 0.2, 0.7};
};

struct ModelConfig {
  Arch arch = Arch::gcn;
  int layers = 2;
  int hidden = 16;
  double dropout = 0.0;
  Pool pool = Pool::mean;  // graph tasks only
  double lr = 1e-2;
  std::filesystem::path checkpoint;  // teacher only: load instead of training
};

struct AblationConfig {
  bool contrast = false;  // contrast level x loss x head grid
  bool kernel = false;    // kernel x metric grid
  int epochs = 0;         // 0: same as run.epochs
};

using KeyValues = std::map<std::string, std::string>;

struct RunConfig {
  DatasetConfig dataset;
  ModelConfig teacher;
  ModelConfig student;
  distill::DistillSpec distill;
  std::map<std::string, KeyValues> method_overrides;  // method name -> distill keys
  train::OptimSpec optim;
  int epochs = 300;
  int patience = 50;
  int batch_size = 32;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  int threads = 1;
  AblationConfig ablation;

  void validate() const;
};

/// Built-in defaults: the desk-scale SBM benchmark.
RunConfig default_config();
RunConfig parse_config(const std::string& text, const std::string& source = "<memory>");
RunConfig load_config(const std::filesystem::path& path);
/// "section.key=value"; method sections use "method.<name>.key=value".
void apply_override(RunConfig& config, const std::string& assignment);
void set_value(RunConfig& config, const std::string& section, const std::string& key, const std::string& value);
/// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const RunConfig& config);

/// Sets one DistillSpec field by its configuration key.
void set_distill_key(distill::DistillSpec& spec, const std::string& key, const std::string& value);
/// The global [distill] block with the method and its [method.<name>] overrides applied.
distill::DistillSpec method_spec(const RunConfig& config, const std::string& method);

std::vector<Graph> load_graphs(const DatasetConfig& dataset);
ModelSpec model_spec(const ModelConfig& model, const train::Dataset& data);
train::TrainOptions train_options(const RunConfig& config, const ModelConfig& model, std::uint64_t seed);

}  // namespace gkd::config
