#pragma once

#include "gkd/config.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gkd::bench {

/// One CSV row: method, seed, split, metric, value. Failed cells carry the
/// error text and no value.
struct Record {
  std::string method;
  std::uint64_t seed = 0;
  std::string split;
  std::string metric;
  std::optional<double> value;
  std::string error;
};

struct Summary {
  std::string method;
  std::size_t runs = 0;  // successful seeds
  double mean = 0;
  double stddev = 0;     // sample standard deviation; 0 for a single run
};

/// One ablation cell of the contrast grid.
struct ContrastCell {
  distill::ContrastLevel level;
  distill::AuxLoss loss;  // crd or gcrd
  distill::HeadKind head;
};

/// One ablation cell of the structure-preserving grid.
struct KernelCell {
  distill::KernelKind kernel;
  distill::GspMetric metric;
};

std::vector<ContrastCell> contrast_grid();
std::vector<KernelCell> kernel_grid();
std::string label(const ContrastCell& cell);
std::string label(const KernelCell& cell);

struct BenchResult {
  std::vector<Record> records;  // ordered by seed, then method
  std::string metric;           // test metric name
  std::string table;
  std::string contrast_table;   // empty unless requested
  std::string kernel_table;

  /// Test-metric summary of `method` (including "teacher").
  Summary summary(const std::string& method) const;
  /// Mean of a named metric over seeds, when any run succeeded.
  std::optional<double> mean(const std::string& method, const std::string& split, const std::string& metric) const;
};

/// Every seed is `base_seed + s` for s in config.seeds. The dataset and split
/// stay fixed; the run seed drives initialization, dropout and sampling.
BenchResult run_benchmark(const config::RunConfig& config, std::uint64_t base_seed);

void write_csv(std::ostream& out, const std::vector<Record>& records);

/// Display name used in the tables, e.g. "kd+gcrd" -> "KD + G-CRD".
std::string display_name(const std::string& method);

}  // namespace gkd::bench
