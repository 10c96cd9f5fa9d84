#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dsq/config.hpp"
#include "dsq/experiment.hpp"
#include "dsq/verify.hpp"

using namespace dsq;
namespace fs = std::filesystem;

namespace {

const char* kMinimalConfig = R"(
# minimal quadratic experiment
[problem]
kind = "quadratic"
d = 6
m_per_node = 10
heterogeneity = 0.3
seed = 5

[topology]
kind = "ring"
n = 4

[compressor]
kind = "topk"
k = 3

[output]
outdir = "OUTDIR"

[[algorithms]]
name = "DeepSqueeze"
gammas = [0.05]
eta = 0.4
T = 10
seeds = [3]
)";

std::string with_outdir(const std::string& text, const fs::path& outdir) {
  std::string out = text;
  const auto pos = out.find("OUTDIR");
  if (pos != std::string::npos) out.replace(pos, 6, outdir.string());
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DSQ_CLI_PATH) + " " + args + " > " +
                          log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_SUITE("config_cli") {

TEST_CASE("toml parsing") {
  SUBCASE("minimal config round trip") {
    const auto cfg = config::parse_toml(with_outdir(kMinimalConfig, "out"));
    CHECK(cfg.problem.kind == "quadratic");
    CHECK(cfg.problem.d == 6);
    CHECK(cfg.topology.kind == "ring");
    CHECK(cfg.topology.n == 4);
    CHECK(cfg.compressor.kind == "topk");
    CHECK(cfg.compressor.k == 3);
    REQUIRE(cfg.algorithms.size() == 1);
    CHECK(cfg.algorithms[0].name == "DeepSqueeze");
    CHECK(cfg.algorithms[0].gammas == std::vector<double>{0.05});
    CHECK(cfg.algorithms[0].T == 10);
    CHECK(!cfg.target_loss.has_value());
    CHECK(!cfg.lr_decay.has_value());
  }
  SUBCASE("unknown keys are named") {
    try {
      config::parse_toml("[problem]\nwat = 3\n[[algorithms]]\nname = \"DPSGD\"\n"
                         "gammas = [0.1]\nseeds = [1]\n");
      FAIL("expected ConfigError");
    } catch (const config::ConfigError& e) {
      CHECK(std::string(e.what()).find("problem.wat") != std::string::npos);
    }
  }
  SUBCASE("unknown section rejected") {
    CHECK_THROWS_AS(config::parse_toml("[mystery]\nx = 1\n"), config::ConfigError);
  }
  SUBCASE("missing algorithms rejected") {
    CHECK_THROWS_AS(config::parse_toml("[problem]\nkind = \"quadratic\"\n"),
                    config::ConfigError);
  }
  SUBCASE("malformed value carries the line number") {
    try {
      config::parse_toml("[problem]\nd = oops\n");
      FAIL("expected ConfigError");
    } catch (const config::ConfigError& e) {
      CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
  }
  SUBCASE("edges topology with nested arrays") {
    const auto cfg = config::parse_toml(
        "[topology]\nkind = \"edges\"\nn = 3\nedges = [[0, 1], [1, 2]]\n"
        "[[algorithms]]\nname = \"DPSGD\"\ngammas = [0.1]\nseeds = [1]\n");
    REQUIRE(cfg.topology.edges.size() == 2);
    CHECK(cfg.topology.edges[1] == std::pair<Index, Index>{1, 2});
    const auto W = config::build_topology(cfg.topology);
    CHECK(topology::check(W).empty());
  }
  SUBCASE("multi-line gamma grid") {
    const auto cfg = config::parse_toml(
        "[[algorithms]]\nname = \"DPSGD\"\ngammas = [\n  1.0,\n  0.5,\n]\nseeds = [1]\n");
    CHECK(cfg.algorithms[0].gammas == std::vector<double>{1.0, 0.5});
  }
  SUBCASE("lr decay block") {
    const auto cfg = config::parse_toml(
        "[lr_decay]\nevery = 60\nfactor = 0.2\n"
        "[[algorithms]]\nname = \"DPSGD\"\ngammas = [0.1]\nseeds = [1]\n");
    REQUIRE(cfg.lr_decay.has_value());
    CHECK(cfg.lr_decay->every == 60);
    CHECK(cfg.lr_decay->factor == 0.2);
  }
}

TEST_CASE("libsvm-backed problems through the config layer") {
  const auto dir = fresh_dir("dsq_test_libsvm");
  const auto data_path = dir / "tiny.libsvm";
  {
    std::ofstream f(data_path);
    for (int i = 0; i < 8; ++i)
      f << (i % 2 == 0 ? "+1" : "-1") << " 1:" << 0.5 * i << " 2:" << (i % 2) << "\n";
  }
  config::ProblemConfig pc;
  pc.kind = "logistic";
  pc.libsvm_path = data_path.string();
  pc.partition = "label_sorted";
  pc.l2_reg = 0.05;
  pc.seed = 2;
  const auto problem = config::build_problem(pc, 2);
  CHECK(problem.kind == problems::Kind::Logistic);
  CHECK(problem.n_nodes == 2);
  CHECK(problem.dim == 2);
  // label-sorted on the alternating labels puts one class per node
  for (Index node = 0; node < 2; ++node) {
    const auto& b = problem.targets[static_cast<std::size_t>(node)];
    for (Index r = 1; r < b.size(); ++r) CHECK(b[r] == b[0]);
  }

  engine::RunConfig rc;
  rc.algorithm = engine::Algorithm::DeepSqueeze;
  rc.W = topology::build_from_edges(2, {{0, 1}});
  rc.compressor = compression::CompressorSpec::topk(1);
  rc.gamma = 0.1;
  rc.eta = 0.5;
  rc.T = 5;
  const auto result = engine::run(rc, problem);
  CHECK(result.trace.status == RunStatus::Ok);
}

TEST_CASE("experiment runs write traces and a manifest") {
  const auto dir = fresh_dir("dsq_test_run");
  const auto cfg = config::parse_toml(with_outdir(kMinimalConfig, dir));
  const auto result = experiment::run_experiment(cfg, true);
  REQUIRE(result.cells.size() == 1);
  CHECK(result.cells[0].status == RunStatus::Ok);
  CHECK(result.cells[0].trace.records.size() == 11);  // T=10, eval_every=1, plus t=0

  const auto csv = slurp(dir / result.cells[0].csv_name);
  CHECK(csv.rfind("t,loss,grad_norm2,consensus2,delta_mass,bits_cum\n", 0) == 0);

  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(manifest.contains("config"));
  CHECK(manifest.contains("problem_constants"));
  CHECK(manifest["cells"].size() == 1);
  CHECK(manifest["cells"][0]["status"] == "ok");
  // aggressive compression on a tiny problem can make the constants
  // infeasible; the manifest then carries the named violation instead
  const auto& theory = manifest["cells"][0]["theory"];
  CHECK(theory.contains("alpha2"));
  CHECK((theory.contains("C2") || theory.contains("error")));

  // byte-identical re-run (timestamps live only in the manifest)
  const auto again = experiment::run_experiment(cfg, false);
  CHECK(trace_csv(again.cells[0].trace) == csv);
}

TEST_CASE("comparison selects gammas and honours the target") {
  const auto dir = fresh_dir("dsq_test_compare");
  std::string text = R"(
[problem]
kind = "quadratic"
d = 6
m_per_node = 10
heterogeneity = 0.0
seed = 5

[topology]
kind = "ring"
n = 4

[compressor]
kind = "identity"

[output]
outdir = "OUTDIR"
target_loss = 1e-4

[[algorithms]]
name = "DeepSqueeze"
gammas = [0.1, 0.02]
eta = 0.4
T = 300
seeds = [3]
eval_every = 10

[[algorithms]]
name = "DPSGD"
gammas = [0.1, 0.02]
eta = 0.4
T = 300
seeds = [3]
eval_every = 10
)";
  const auto cfg = config::parse_toml(with_outdir(text, dir));
  const auto result = experiment::run_experiment(cfg, false);
  const auto rows = experiment::compare(result, cfg);
  REQUIRE(rows.size() == 2);
  // identity compression: the two algorithms coincide, so the comparison does
  CHECK(rows[0].gamma == rows[1].gamma);
  CHECK(rows[0].final_loss == doctest::Approx(rows[1].final_loss).epsilon(1e-9));
  if (rows[0].iters_to_target) {
    REQUIRE(rows[1].iters_to_target);
    CHECK(*rows[0].iters_to_target == doctest::Approx(*rows[1].iters_to_target));
  }

  // unreachable target: empty fields, not a failure
  auto strict = cfg;
  strict.target_loss = 1e-30;
  const auto rows2 = experiment::compare(result, strict);
  for (const auto& row : rows2) {
    CHECK(!row.iters_to_target.has_value());
    CHECK(!row.bits_to_target.has_value());
  }
  const auto csv = experiment::comparison_csv(rows2);
  CHECK(csv.find(",,\n") != std::string::npos);
}

TEST_CASE("cli: spectrum") {
  const auto dir = fresh_dir("dsq_test_cli_spectrum");
  CHECK(run_cli("spectrum --ring 8", dir / "out.txt") == 0);
  std::ifstream in(dir / "out.txt");
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  REQUIRE(values.size() == 8);
  CHECK(values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(values[1] == doctest::Approx((1.0 + std::sqrt(2.0)) / 3.0).epsilon(1e-10));
  CHECK(run_cli("spectrum --ring 1", dir / "err.txt") == 1);

  // a topology-only config is enough for spectrum
  const auto cfg_path = dir / "topo.toml";
  std::ofstream(cfg_path) << "[topology]\nkind = \"complete\"\nn = 4\n";
  CHECK(run_cli("spectrum --config " + cfg_path.string(), dir / "cfg.txt") == 0);
  std::ifstream in2(dir / "cfg.txt");
  values.clear();
  while (in2 >> v) values.push_back(v);
  REQUIRE(values.size() == 4);
  CHECK(values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(values[3] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cli: calibrate-alpha") {
  const auto dir = fresh_dir("dsq_test_cli_alpha");
  CHECK(run_cli("calibrate-alpha --randk 8 --dim 32 --samples 10000", dir / "out.txt") == 0);
  const auto text = slurp(dir / "out.txt");
  const auto pos = text.find("mean_ratio,");
  REQUIRE(pos != std::string::npos);
  const double mean = std::stod(text.substr(pos + 11));
  CHECK(mean == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("cli: run exit codes") {
  const auto dir = fresh_dir("dsq_test_cli_run");

  SUBCASE("success writes csv and manifest") {
    const auto cfg_path = dir / "ok.toml";
    std::ofstream(cfg_path) << with_outdir(kMinimalConfig, dir / "out");
    CHECK(run_cli("run --config " + cfg_path.string(), dir / "run.log") == 0);
    CHECK(fs::exists(dir / "out" / "DeepSqueeze_0.05_3.csv"));
    CHECK(fs::exists(dir / "out" / "manifest.json"));
  }
  SUBCASE("unknown key exits 1 and names it") {
    const auto cfg_path = dir / "bad.toml";
    std::ofstream(cfg_path) << "[problem]\nwat = 1\n";
    CHECK(run_cli("run --config " + cfg_path.string(), dir / "bad.log") == 1);
    CHECK(slurp(dir / "bad.log").find("problem.wat") != std::string::npos);
  }
  SUBCASE("missing config file exits 1") {
    CHECK(run_cli("run --config /nonexistent.toml", dir / "miss.log") == 1);
  }
  SUBCASE("divergence is a recorded outcome with exit 2") {
    std::string text = R"(
[problem]
kind = "quadratic"
d = 6
m_per_node = 10
seed = 5

[topology]
kind = "ring"
n = 4

[compressor]
kind = "bitquant"
bits = 2

[output]
outdir = "OUTDIR"

[[algorithms]]
name = "DCDPSGD"
gammas = [50.0]
eta = 0.4
T = 200
seeds = [3]
)";
    const auto cfg_path = dir / "diverge.toml";
    std::ofstream(cfg_path) << with_outdir(text, dir / "div_out");
    CHECK(run_cli("run --config " + cfg_path.string(), dir / "div.log") == 2);
    const auto manifest = nlohmann::json::parse(slurp(dir / "div_out" / "manifest.json"));
    CHECK(manifest["cells"][0]["status"] == "diverged");
  }
}

TEST_CASE("cli: compare writes comparison.csv") {
  const auto dir = fresh_dir("dsq_test_cli_compare");
  std::string text = R"(
[problem]
kind = "quadratic"
d = 6
m_per_node = 10
heterogeneity = 0.0
seed = 5

[topology]
kind = "ring"
n = 4

[compressor]
kind = "identity"

[output]
outdir = "OUTDIR"
target_loss = 1e-3

[[algorithms]]
name = "DeepSqueeze"
gammas = [0.1, 0.02]
eta = 0.4
T = 200
seeds = [3]
eval_every = 10

[[algorithms]]
name = "CentralSGD"
gammas = [0.1, 0.02]
eta = 0.4
T = 200
seeds = [3]
eval_every = 10
)";
  const auto cfg_path = dir / "cmp.toml";
  std::ofstream(cfg_path) << with_outdir(text, dir / "out");
  CHECK(run_cli("compare --config " + cfg_path.string(), dir / "cmp.log") == 0);
  const auto csv = slurp(dir / "out" / "comparison.csv");
  CHECK(csv.rfind("algo,gamma,final_loss,iters_to_target,bits_to_target\n", 0) == 0);
  CHECK(csv.find("DeepSqueeze,") != std::string::npos);
  CHECK(csv.find("CentralSGD,") != std::string::npos);

  // compare needs at least two algorithm blocks
  std::string single = text;
  const auto cut = single.rfind("[[algorithms]]");
  single = single.substr(0, cut);
  const auto single_path = dir / "single.toml";
  std::ofstream(single_path) << with_outdir(single, dir / "out2");
  CHECK(run_cli("compare --config " + single_path.string(), dir / "single.log") == 1);
}

TEST_CASE("cli: verify desk preset passes on a correct build") {
  const auto dir = fresh_dir("dsq_test_cli_verify");
  CHECK(run_cli("verify --preset desk", dir / "verify.log") == 0);
  CHECK(slurp(dir / "verify.log").find("all checks passed") != std::string::npos);
}

}  // TEST_SUITE
