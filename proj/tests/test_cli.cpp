#include "helpers.hpp"

#include "gkd/simrep.hpp"

#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#ifndef GKD_CLI_PATH
#error "GKD_CLI_PATH must name the gkd executable"
#endif

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome run(const gkd::testing::TempDir& dir, const std::string& args) {
  const fs::path out = dir / "stdout.txt";
  const std::string cmd = std::string("\"") + GKD_CLI_PATH + "\" --log-level error " + args + " > \"" + out.string() +
                          "\" 2> \"" + (dir / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = slurp(out);
  return o;
}

std::size_t count_lines(const std::string& text) {
  std::size_t n = 0;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++n;
  return n;
}

// A small, fast run configuration.
fs::path tiny_config(const gkd::testing::TempDir& dir) {
  const fs::path p = dir / "tiny.ini";
  std::ofstream(p) << "[dataset]\nblocks = 3\nnodes_per_block = 20\np_in = 0.3\np_out = 0.02\nd_in = 6\n"
                      "train = 0.4\nvalid = 0.3\ntest = 0.3\n"
                      "[teacher]\nhidden = 16\n[student]\nhidden = 8\n"
                      "[run]\nepochs = 6\npatience = 3\nseeds = 0\nmethods = supervised, kd+gcrd\n";
  return p;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  gkd::testing::TempDir dir("cli");
  CHECK(run(dir, "").code == 2);
  CHECK(run(dir, "frobnicate").code == 2);
  CHECK(run(dir, "gen-data graphene --out " + (dir / "d").string()).code == 2);
  CHECK(run(dir, "gradcheck --all").code == 2);  // no seed
  CHECK(run(dir, "gradcheck --seed 1").code == 2);
  CHECK(run(dir, "gradcheck --loss nosuch --seed 1").code == 2);
  CHECK(run(dir, "bench").code == 2);  // no seed
  CHECK(run(dir, "bench --seed 0 --override run.bogus=1").code == 2);
  CHECK(run(dir, "analyze").code == 2);
  CHECK(run(dir, "--help").code == 0);
}

TEST_CASE("gen-data writes graphs and a manifest") {
  gkd::testing::TempDir dir("cli");
  const fs::path mol = dir / "mol";
  const Outcome m = run(dir, "gen-data mol --count 100 --out " + mol.string() + " --seed 3");
  CHECK(m.code == 0);
  CHECK(count_lines(slurp(mol / "manifest.txt")) == 100);
  CHECK(fs::exists(mol / "mol_0099.graph"));
  CHECK(gkd::load_dataset(mol / "manifest.txt").size() == 100);

  const fs::path sbm = dir / "sbm";
  const Outcome s = run(dir, "gen-data sbm --out " + sbm.string() + " --seed 1 --blocks 2 --nodes-per-block 10");
  CHECK(s.code == 0);
  CHECK(count_lines(slurp(sbm / "manifest.txt")) == 1);
  CHECK(gkd::load_dataset(sbm / "manifest.txt").front().num_nodes() == 20);

  // Identical inputs give identical files.
  const std::string first = slurp(sbm / "sbm.graph");
  CHECK(run(dir, "gen-data sbm --out " + sbm.string() + " --seed 1 --blocks 2 --nodes-per-block 10").code == 0);
  CHECK(slurp(sbm / "sbm.graph") == first);

  CHECK(run(dir, "gen-data sbm --out " + sbm.string() + " --p-in 0.01 --p-out 0.1").code != 0);
}

TEST_CASE("gradcheck exit codes") {
  gkd::testing::TempDir dir("cli");
  const Outcome one = run(dir, "gradcheck --loss gcrd --seed 1 --instances 2");
  CHECK(one.code == 0);
  CHECK(count_lines(one.out) == 1);
  CHECK(one.out.rfind("ok   gcrd", 0) == 0);

  const Outcome bad = run(dir, "gradcheck --loss sabotaged_square --sabotage --seed 1 --instances 2");
  CHECK(bad.code == 1);
  CHECK(bad.out.find("FAIL sabotaged_square") != std::string::npos);
}

TEST_CASE("teacher, student and analysis round trip") {
  gkd::testing::TempDir dir("cli");
  const std::string cfg = "--config " + tiny_config(dir).string();
  const fs::path teacher = dir / "teacher.json";
  const fs::path student = dir / "student.json";
  const fs::path temb = dir / "teacher.emb";
  REQUIRE(run(dir, "train-teacher " + cfg + " --seed 0 --out " + teacher.string() + " --embeddings " + temb.string()).code == 0);
  REQUIRE(run(dir, "distill " + cfg + " --teacher " + teacher.string() + " --method kd+gcrd --seed 1 --out " +
                       student.string()).code == 0);

  const Outcome self = run(dir, "analyze " + cfg + " --teacher " + teacher.string() + " --students " + teacher.string());
  CHECK(self.code == 0);
  std::istringstream lines(self.out);
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  CHECK(header == "student,cka,mantel_global,mantel_local");
  double c = 0, g = 0, l = 0;
  char comma = 0;
  std::istringstream fields(row.substr(row.find(',') + 1));
  fields >> c >> comma >> g >> comma >> l;
  CHECK(std::abs(c - 1) < 1e-10);
  CHECK(std::abs(g - 1) < 1e-10);
  CHECK(std::abs(l - 1) < 1e-10);

  const Outcome none = run(dir, "analyze " + cfg + " --teacher " + teacher.string());
  CHECK(none.code == 0);
  CHECK(none.out == "student,cka,mantel_global,mantel_local\n");

  const Outcome both = run(dir, "analyze " + cfg + " --teacher " + teacher.string() + " --students " + student.string() +
                                    " --out " + (dir / "sim.csv").string());
  CHECK(both.code == 0);
  CHECK(count_lines(slurp(dir / "sim.csv")) == 2);

  // The file-based mode: embeddings plus an edge list over node ids.
  const gkd::IndexList ids = gkd::simrep::read_embeddings(temb).node_ids;
  REQUIRE(ids.size() >= 4);
  {
    std::ofstream edges(dir / "edges.txt");
    for (std::size_t i = 0; i + 1 < ids.size(); ++i) edges << ids[i] << ' ' << ids[i + 1] << '\n';
  }
  const Outcome files = run(dir, "analyze --embeddings " + temb.string() + " " + temb.string() + " --edges " +
                                     (dir / "edges.txt").string());
  CHECK(files.code == 0);
  CHECK(count_lines(files.out) == 2);
  CHECK(run(dir, "analyze --embeddings " + temb.string() + " " + temb.string()).code == 2);

  // A checkpoint whose input width disagrees with the data is named in the error.
  const Outcome wide = run(dir, "analyze " + cfg + " --override dataset.d_in=9 --teacher " + teacher.string());
  CHECK(wide.code == 1);
  CHECK(slurp(dir / "stderr.txt").find("teacher.json") != std::string::npos);
}

TEST_CASE("bench emits csv and a table, deterministically") {
  gkd::testing::TempDir dir("cli");
  const std::string cfg = "--config " + tiny_config(dir).string();
  const Outcome a = run(dir, "bench " + cfg + " --seed 5 --csv " + (dir / "a.csv").string());
  const Outcome b = run(dir, "bench " + cfg + " --seed 5 --csv " + (dir / "b.csv").string());
  CHECK(a.code == 0);
  CHECK(b.code == 0);
  CHECK(slurp(dir / "a.csv").rfind("method,seed,split,metric,value\n", 0) == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(a.out.find("Supervised Student") != std::string::npos);
  CHECK(a.out.find("KD + G-CRD") != std::string::npos);
}
