#include "gkd/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace gkd::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) throw ConfigError("'" + key + "': cannot parse '" + value + "'");
  return out;
}

int as_int(const std::string& key, const std::string& v) { return parse_number<int>(key, v); }
double as_double(const std::string& key, const std::string& v) { return parse_number<double>(key, v); }
std::uint64_t as_u64(const std::string& key, const std::string& v) { return parse_number<std::uint64_t>(key, v); }

bool as_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "': expected a boolean, got '" + v + "'");
}

// "0,1,5" or "0..9" (inclusive), or a mix.
std::vector<std::uint64_t> as_seeds(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  for (const std::string& item : split_list(v)) {
    const auto dots = item.find("..");
    if (dots == std::string::npos) {
      out.push_back(as_u64(key, item));
      continue;
    }
    const std::uint64_t lo = as_u64(key, trim(item.substr(0, dots)));
    const std::uint64_t hi = as_u64(key, trim(item.substr(dots + 2)));
    if (hi < lo) throw ConfigError("'" + key + "': empty range '" + item + "'");
    for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
  }
  return out;
}

template <class F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("'" + key + "': " + e.what());
  }
}

void set_model(ModelConfig& m, const std::string& section, const std::string& key, const std::string& value) {
  const std::string name = section + "." + key;
  if (key == "arch") m.arch = wrap(name, [&] { return parse_arch(value); });
  else if (key == "layers") m.layers = as_int(name, value);
  else if (key == "hidden") m.hidden = as_int(name, value);
  else if (key == "dropout") m.dropout = as_double(name, value);
  else if (key == "pool") m.pool = wrap(name, [&] { return parse_pool(value); });
  else if (key == "lr") m.lr = as_double(name, value);
  else if (key == "checkpoint" && section == "teacher") m.checkpoint = value;
  else throw ConfigError("unknown key '" + name + "'");
}

void set_dataset(DatasetConfig& d, const std::string& key, const std::string& value) {
  const std::string name = "dataset." + key;
  if (key == "kind") {
    if (value != "sbm" && value != "mol" && value != "manifest") throw ConfigError("'" + name + "': expected sbm, mol or manifest");
    d.kind = value;
  } else if (key == "manifest") d.manifest = value;
  else if (key == "train") d.split.train = as_double(name, value);
  else if (key == "valid") d.split.valid = as_double(name, value);
  else if (key == "test") d.split.test = as_double(name, value);
  else if (key == "split_seed") d.split.seed = as_u64(name, value);
  else if (key == "split_mode") d.split.mode = wrap(name, [&] { return parse_split_mode(value); });
  else if (key == "blocks") d.sbm.blocks = as_int(name, value);
  else if (key == "nodes_per_block") d.sbm.nodes_per_block = as_int(name, value);
  else if (key == "p_in") d.sbm.p_in = as_double(name, value);
  else if (key == "p_out") d.sbm.p_out = as_double(name, value);
  else if (key == "d_in") d.sbm.d_in = as_int(name, value);
  else if (key == "noise") d.sbm.noise = as_double(name, value);
  else if (key == "count") d.mol.count = as_int(name, value);
  else if (key == "min_n") d.mol.min_n = as_int(name, value);
  else if (key == "max_n") d.mol.max_n = as_int(name, value);
  else if (key == "classes") d.mol.num_classes = as_int(name, value);
  else if (key == "seed") d.sbm.seed = d.mol.seed = as_u64(name, value);
  else throw ConfigError("unknown key '" + name + "'");
}

void set_optim(train::OptimSpec& o, const std::string& key, const std::string& value) {
  const std::string name = "optim." + key;
  if (key == "kind") o.kind = wrap(name, [&] { return train::parse_optim(value); });
  else if (key == "weight_decay") o.weight_decay = as_double(name, value);
  else if (key == "beta1") o.beta1 = as_double(name, value);
  else if (key == "beta2") o.beta2 = as_double(name, value);
  else if (key == "eps") o.eps = as_double(name, value);
  else throw ConfigError("unknown key '" + name + "'");
}

void set_run(RunConfig& c, const std::string& key, const std::string& value) {
  const std::string name = "run." + key;
  if (key == "epochs") c.epochs = as_int(name, value);
  else if (key == "patience") c.patience = as_int(name, value);
  else if (key == "batch_size") c.batch_size = as_int(name, value);
  else if (key == "seeds") c.seeds = as_seeds(name, value);
  else if (key == "threads") c.threads = as_int(name, value);
  else if (key == "methods") {
    c.methods = split_list(value);
    for (const std::string& m : c.methods) wrap(name, [&] { return distill::parse_method(m); });
  } else throw ConfigError("unknown key '" + name + "'");
}

void set_ablation(AblationConfig& a, const std::string& key, const std::string& value) {
  const std::string name = "ablation." + key;
  if (key == "contrast") a.contrast = as_bool(name, value);
  else if (key == "kernel") a.kernel = as_bool(name, value);
  else if (key == "epochs") a.epochs = as_int(name, value);
  else throw ConfigError("unknown key '" + name + "'");
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

}  // namespace

void set_distill_key(distill::DistillSpec& s, const std::string& key, const std::string& value) {
  const std::string name = "distill." + key;
  using namespace distill;
  if (key == "method") s.method = wrap(name, [&] { return parse_method(value); });
  else if (key == "alpha") s.alpha = as_double(name, value);
  else if (key == "beta") s.beta = as_double(name, value);
  else if (key == "tau1") s.tau1 = as_double(name, value);
  else if (key == "tau2") s.tau2 = as_double(name, value);
  else if (key == "kernel") s.kernel.kind = wrap(name, [&] { return parse_kernel(value); });
  else if (key == "kernel_c") s.kernel.c = as_double(name, value);
  else if (key == "kernel_degree") s.kernel.degree = as_int(name, value);
  else if (key == "kernel_sigma") s.kernel.sigma = as_double(name, value);
  else if (key == "kernel_normalize") s.kernel.normalize_inputs = as_bool(name, value);
  else if (key == "gsp_metric") s.gsp_metric = wrap(name, [&] { return parse_gsp_metric(value); });
  else if (key == "gsp_cap") s.gsp_cap = as_int(name, value);
  else if (key == "head") s.head = wrap(name, [&] { return parse_head(value); });
  else if (key == "head_dim") s.head_dim = as_int(name, value);
  else if (key == "contrast_level") s.contrast_level = wrap(name, [&] { return parse_contrast_level(value); });
  else if (key == "lsp_kl_reverse") s.lsp_kl_reverse = as_bool(name, value);
  else throw ConfigError("unknown key '" + name + "'");
}

void RunConfig::validate() const {
  // Component checks throw std::invalid_argument; report them as config errors.
  wrap("config", [&] {
    dataset.split.validate();
    optim.validate();
    distill.validate();
    for (const std::string& m : methods) method_spec(*this, m).validate();
    return 0;
  });
  if (dataset.kind == "manifest" && dataset.manifest.empty()) throw ConfigError("dataset.manifest is required for kind=manifest");
  for (const ModelConfig* m : {&teacher, &student}) {
    if (m->layers < 1 || m->hidden < 1) throw ConfigError("model layers and hidden must be >= 1");
    if (!(m->lr > 0)) throw ConfigError("model lr must be positive");
  }
  if (epochs < 1) throw ConfigError("run.epochs must be >= 1");
  if (patience < 0 || patience >= epochs) throw ConfigError("run.patience must lie in [0, epochs)");
  if (batch_size < 1) throw ConfigError("run.batch_size must be >= 1");
  if (seeds.empty()) throw ConfigError("run.seeds must list at least one seed");
  if (methods.empty()) throw ConfigError("run.methods must list at least one method");
  if (threads < 1) throw ConfigError("run.threads must be >= 1");
  if (ablation.epochs < 0) throw ConfigError("ablation.epochs must be >= 0");
}

RunConfig default_config() {
  RunConfig c;
  c.teacher.layers = 3;
  c.teacher.hidden = 256;
  c.teacher.lr = 1e-3;
  c.student.layers = 2;
  c.student.hidden = 16;
  c.student.lr = 1e-2;
  c.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  c.methods = {"supervised", "kd", "fitnet", "at", "lsp", "gsp", "gcrd", "kd+gcrd"};
  c.method_overrides["fitnet"]["head"] = "linear";
  return c;
}

void set_value(RunConfig& c, const std::string& section, const std::string& key, const std::string& value) {
  if (section == "dataset") set_dataset(c.dataset, key, value);
  else if (section == "teacher") set_model(c.teacher, section, key, value);
  else if (section == "student") set_model(c.student, section, key, value);
  else if (section == "distill") set_distill_key(c.distill, key, value);
  else if (section == "optim") set_optim(c.optim, key, value);
  else if (section == "run") set_run(c, key, value);
  else if (section == "ablation") set_ablation(c.ablation, key, value);
  else if (section.rfind("method.", 0) == 0) {
    const std::string method = section.substr(7);
    wrap(section, [&] { return distill::parse_method(method); });
    distill::DistillSpec probe;
    set_distill_key(probe, key, value);  // validates the key and value
    c.method_overrides[method][key] = value;
  } else
    throw ConfigError("unknown section '" + section + "'");
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig c = default_config();
  std::istringstream in(text);
  std::string section;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    const auto cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.erase(cut);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    if (section.empty()) throw ConfigError(where + "key outside any section");
    try {
      set_value(c, section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "': expected section.key=value");
  const std::string lhs = trim(assignment.substr(0, eq));
  const auto dot = lhs.rfind('.');
  if (dot == std::string::npos || dot == 0) throw ConfigError("override '" + assignment + "': expected section.key=value");
  set_value(c, lhs.substr(0, dot), lhs.substr(dot + 1), trim(assignment.substr(eq + 1)));
}

std::string format_config(const RunConfig& c) {
  std::ostringstream o;
  const auto& d = c.dataset;
  o << "[dataset]\nkind = " << d.kind << "\n";
  if (!d.manifest.empty()) o << "manifest = " << d.manifest.string() << "\n";
  o << "train = " << format_real(d.split.train) << "\nvalid = " << format_real(d.split.valid)
    << "\ntest = " << format_real(d.split.test) << "\nsplit_seed = " << d.split.seed
    << "\nsplit_mode = " << to_string(d.split.mode) << "\n";
  if (d.kind == "sbm")
    o << "seed = " << d.sbm.seed << "\nblocks = " << d.sbm.blocks << "\nnodes_per_block = " << d.sbm.nodes_per_block
      << "\np_in = " << format_real(d.sbm.p_in) << "\np_out = " << format_real(d.sbm.p_out) << "\nd_in = " << d.sbm.d_in
      << "\nnoise = " << format_real(d.sbm.noise) << "\n";
  if (d.kind == "mol")
    o << "seed = " << d.mol.seed << "\ncount = " << d.mol.count << "\nmin_n = " << d.mol.min_n
      << "\nmax_n = " << d.mol.max_n << "\nclasses = " << d.mol.num_classes << "\n";
  for (const auto& [name, m] : {std::pair<const char*, const ModelConfig*>{"teacher", &c.teacher}, {"student", &c.student}}) {
    o << "\n[" << name << "]\narch = " << to_string(m->arch) << "\nlayers = " << m->layers << "\nhidden = " << m->hidden
      << "\ndropout = " << format_real(m->dropout) << "\npool = " << to_string(m->pool) << "\nlr = " << format_real(m->lr)
      << "\n";
    if (!m->checkpoint.empty()) o << "checkpoint = " << m->checkpoint.string() << "\n";
  }
  const auto& s = c.distill;
  o << "\n[distill]\nmethod = " << to_string(s.method) << "\nalpha = " << format_real(s.alpha)
    << "\nbeta = " << format_real(s.beta) << "\ntau1 = " << format_real(s.tau1) << "\ntau2 = " << format_real(s.tau2)
    << "\nkernel = " << to_string(s.kernel.kind) << "\nkernel_c = " << format_real(s.kernel.c)
    << "\nkernel_degree = " << s.kernel.degree << "\nkernel_sigma = " << format_real(s.kernel.sigma)
    << "\nkernel_normalize = " << (s.kernel.normalize_inputs ? "true" : "false")
    << "\ngsp_metric = " << to_string(s.gsp_metric) << "\ngsp_cap = " << s.gsp_cap << "\nhead = " << to_string(s.head)
    << "\nhead_dim = " << s.head_dim << "\ncontrast_level = " << to_string(s.contrast_level)
    << "\nlsp_kl_reverse = " << (s.lsp_kl_reverse ? "true" : "false") << "\n";
  for (const auto& [method, kv] : c.method_overrides) {
    o << "\n[method." << method << "]\n";
    for (const auto& [k, v] : kv) o << k << " = " << v << "\n";
  }
  o << "\n[optim]\nkind = " << train::to_string(c.optim.kind) << "\nweight_decay = " << format_real(c.optim.weight_decay)
    << "\nbeta1 = " << format_real(c.optim.beta1) << "\nbeta2 = " << format_real(c.optim.beta2)
    << "\neps = " << format_real(c.optim.eps) << "\n";
  o << "\n[run]\nepochs = " << c.epochs << "\npatience = " << c.patience << "\nbatch_size = " << c.batch_size
    << "\nseeds = " << join_seeds(c.seeds) << "\nmethods = " << join(c.methods) << "\nthreads = " << c.threads << "\n";
  o << "\n[ablation]\ncontrast = " << (c.ablation.contrast ? "true" : "false")
    << "\nkernel = " << (c.ablation.kernel ? "true" : "false") << "\nepochs = " << c.ablation.epochs << "\n";
  return o.str();
}

distill::DistillSpec method_spec(const RunConfig& c, const std::string& method) {
  distill::DistillSpec spec = c.distill;
  spec.method = distill::parse_method(method);
  if (const auto it = c.method_overrides.find(method); it != c.method_overrides.end())
    for (const auto& [k, v] : it->second) set_distill_key(spec, k, v);
  return spec;
}

std::vector<Graph> load_graphs(const DatasetConfig& d) {
  if (d.kind == "sbm") return {synth_sbm(d.sbm)};
  if (d.kind == "mol") return synth_molgraphs(d.mol);
  return load_dataset(d.manifest);
}

ModelSpec model_spec(const ModelConfig& m, const train::Dataset& data) {
  ModelSpec s;
  s.arch = m.arch;
  s.num_layers = m.layers;
  s.hidden = m.hidden;
  s.in_dim = static_cast<int>(data.feature_dim());
  s.num_classes = data.num_classes;
  s.task = data.task;
  if (data.task == Task::graph) s.pool = m.pool;
  s.dropout = m.dropout;
  return s;
}

train::TrainOptions train_options(const RunConfig& c, const ModelConfig& m, std::uint64_t seed) {
  train::TrainOptions o;
  o.optim = c.optim;
  o.optim.lr = m.lr;
  o.epochs = c.epochs;
  o.patience = c.patience;
  o.batch_size = c.batch_size;
  o.seed = seed;
  return o;
}

}  // namespace gkd::config
