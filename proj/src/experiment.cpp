#include "dsq/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "dsq/oracle.hpp"
#include "dsq/theory.hpp"

namespace dsq::experiment {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string format_gamma(double gamma) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", gamma);
  return buf;
}

std::string cell_csv_name(const std::string& algo, double gamma, std::uint64_t seed) {
  return algo + "_" + format_gamma(gamma) + "_" + std::to_string(seed) + ".csv";
}

void write_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
  }
  fs::rename(tmp, path);
}

json problem_config_json(const config::ProblemConfig& p) {
  return json{{"kind", p.kind},
              {"d", p.d},
              {"m_per_node", p.m_per_node},
              {"heterogeneity", p.heterogeneity},
              {"margin", p.margin},
              {"noise_sigma", p.noise_sigma},
              {"l2_reg", p.l2_reg},
              {"seed", p.seed},
              {"libsvm_path", p.libsvm_path},
              {"partition", p.partition}};
}

json config_echo(const config::ExperimentConfig& cfg) {
  json algorithms = json::array();
  for (const auto& a : cfg.algorithms) {
    algorithms.push_back(json{{"name", a.name},
                              {"gammas", a.gammas},
                              {"eta", a.eta},
                              {"T", a.T},
                              {"batch_size", a.batch_size},
                              {"seeds", a.seeds},
                              {"eval_every", a.eval_every}});
  }
  json edges = json::array();
  for (auto [i, j] : cfg.topology.edges) edges.push_back(json::array({i, j}));
  json out{{"problem", problem_config_json(cfg.problem)},
           {"topology", json{{"kind", cfg.topology.kind}, {"n", cfg.topology.n},
                             {"edges", edges}}},
           {"compressor", json{{"kind", cfg.compressor.kind},
                               {"k", cfg.compressor.k},
                               {"bits", cfg.compressor.bits}}},
           {"algorithms", algorithms},
           {"outdir", cfg.outdir}};
  if (cfg.target_loss) out["target_loss"] = *cfg.target_loss;
  if (cfg.lr_decay)
    out["lr_decay"] = json{{"every", cfg.lr_decay->every}, {"factor", cfg.lr_decay->factor}};
  return out;
}

json theory_json(const config::ExperimentConfig& cfg, const config::AlgorithmConfig& alg,
                 double gamma, const topology::SpectralInfo& spectrum, double L,
                 double alpha2) {
  json out;
  out["alpha2"] = alpha2;
  try {
    const auto tc = theory::constants(alpha2, alg.eta, spectrum, L, gamma);
    out["C0"] = tc.C0;
    out["C1"] = tc.C1;
    out["C2"] = tc.C2;
    out["C3"] = tc.C3;
    out["feasible"] = tc.feasible;
    out["violated"] = tc.violated;
    // the two remainder-term conventions, with and without the sqrt(C2) factor
    out["remainder_over_T"] = 1.0 / static_cast<double>(alg.T);
    out["remainder_c2_over_T"] = (1.0 + std::sqrt(tc.C2)) / static_cast<double>(alg.T);
  } catch (const theory::InfeasibilityError& e) {
    out["feasible"] = false;
    out["error"] = e.what();
  }
  (void)cfg;
  return out;
}

}  // namespace

ExperimentResult run_experiment(const config::ExperimentConfig& cfg, bool write_files) {
  const auto W = config::build_topology(cfg.topology);
  const auto problem = config::build_problem(cfg.problem, W.n);
  const auto spectrum = topology::spectral(W);
  const auto comp_spec = config::to_spec(cfg.compressor);

  RandomStream prng = substream(cfg.problem.seed, StreamKind::Probe);
  const auto pconsts = problems::constants(problem, 5, prng);

  double alpha2_mean = 0, alpha2_max = 0;
  {
    RandomStream arng = substream(cfg.problem.seed, StreamKind::Calibrate);
    const auto est = compression::empirical_alpha(comp_spec, problem.dim, 2000, arng);
    alpha2_mean = est.mean_ratio;
    alpha2_max = est.max_ratio;
  }

  ExperimentResult result;
  json cells_json = json::array();

  if (write_files) fs::create_directories(cfg.outdir);

  for (const auto& alg : cfg.algorithms) {
    const auto algorithm = engine::parse_algorithm(alg.name);
    for (double gamma : alg.gammas) {
      for (std::uint64_t seed : alg.seeds) {
        engine::RunConfig rc;
        rc.algorithm = algorithm;
        rc.gamma = gamma;
        rc.eta = alg.eta;
        rc.T = alg.T;
        rc.batch_size = alg.batch_size;
        rc.seed = seed;
        rc.W = W;
        rc.compressor = comp_spec;
        rc.eval_every = alg.eval_every;
        rc.lr_decay = cfg.lr_decay;
        const auto run_result = engine::run(rc, problem);

        CellResult cell;
        cell.algorithm = alg.name;
        cell.gamma = gamma;
        cell.seed = seed;
        cell.status = run_result.trace.status;
        cell.diverged_at = run_result.trace.diverged_at;
        cell.final_loss = run_result.trace.records.empty()
                              ? std::numeric_limits<double>::infinity()
                              : run_result.trace.records.back().loss;
        cell.csv_name = cell_csv_name(alg.name, gamma, seed);
        cell.trace = run_result.trace;
        result.any_diverged |= cell.status == RunStatus::Diverged;

        if (write_files)
          write_atomic(fs::path(cfg.outdir) / cell.csv_name, trace_csv(cell.trace));

        json cj{{"algorithm", alg.name},
                {"gamma", gamma},
                {"seed", seed},
                {"status", status_name(cell.status)},
                {"final_loss", cell.final_loss},
                {"records", cell.trace.records.size()},
                {"bits_per_round", cell.trace.bits_per_round},
                {"csv", cell.csv_name},
                {"theory", theory_json(cfg, alg, gamma, spectrum, pconsts.L, alpha2_max)}};
        if (cell.status == RunStatus::Diverged) cj["diverged_at"] = cell.diverged_at;
        cells_json.push_back(std::move(cj));

        result.cells.push_back(std::move(cell));
      }
    }
  }

  json manifest;
  manifest["config"] = config_echo(cfg);
  manifest["problem_constants"] =
      json{{"L", pconsts.L},
           {"sigma2_hat", pconsts.sigma2_hat},
           {"zeta2_hat", pconsts.zeta2_hat},
           {"has_x_star", pconsts.x_star.has_value()},
           {"f_star", pconsts.f_star ? json(*pconsts.f_star) : json()}};
  manifest["topology_spectrum"] = json{{"lambda2", spectrum.lambda2},
                                       {"lambda_n", spectrum.lambda_n},
                                       {"gap", spectrum.gap}};
  manifest["compressor_alpha2"] = json{{"mean", alpha2_mean}, {"max", alpha2_max}};
  manifest["rounds_per_epoch_note"] =
      "one epoch = ceil(m_i / batch) rounds; traces are indexed by round";
  manifest["cells"] = cells_json;
  manifest["generated_unix"] =
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch()).count();
  result.manifest_json = manifest.dump(2) + "\n";

  if (write_files)
    write_atomic(fs::path(cfg.outdir) / "manifest.json", result.manifest_json);
  return result;
}

std::vector<ComparisonRow> compare(const ExperimentResult& result,
                                   const config::ExperimentConfig& cfg) {
  // mean final loss per (algorithm, gamma); diverged cells count as +inf
  struct Aggregate {
    double loss_sum = 0;
    int cells = 0;
    bool any_diverged = false;
  };
  std::map<std::pair<std::string, double>, Aggregate> by_gamma;
  for (const auto& cell : result.cells) {
    auto& agg = by_gamma[{cell.algorithm, cell.gamma}];
    ++agg.cells;
    if (cell.status == RunStatus::Diverged || !std::isfinite(cell.final_loss))
      agg.any_diverged = true;
    else
      agg.loss_sum += cell.final_loss;
  }

  std::vector<std::string> order;
  for (const auto& alg : cfg.algorithms) order.push_back(alg.name);

  std::vector<ComparisonRow> rows;
  for (const auto& name : order) {
    ComparisonRow row;
    row.algorithm = name;
    double best = std::numeric_limits<double>::infinity();
    bool found = false;
    for (const auto& [key, agg] : by_gamma) {
      if (key.first != name) continue;
      const double mean = agg.any_diverged ? std::numeric_limits<double>::infinity()
                                           : agg.loss_sum / agg.cells;
      if (!found || mean < best) {
        found = true;
        best = mean;
        row.gamma = key.second;
        row.final_loss = mean;
      }
    }
    if (!found) continue;

    if (cfg.target_loss) {
      double iter_sum = 0, bits_sum = 0;
      int reached = 0, total = 0;
      for (const auto& cell : result.cells) {
        if (cell.algorithm != name || cell.gamma != row.gamma) continue;
        ++total;
        bool hit = false;
        for (const auto& rec : cell.trace.records)
          if (rec.loss <= *cfg.target_loss) {
            iter_sum += static_cast<double>(rec.t);
            bits_sum += static_cast<double>(rec.bits_cum);
            hit = true;
            break;
          }
        if (hit) ++reached;
      }
      if (total > 0 && reached == total) {
        row.iters_to_target = iter_sum / total;
        row.bits_to_target = bits_sum / total;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "algo,gamma,final_loss,iters_to_target,bits_to_target\n";
  char buf[256];
  for (const auto& row : rows) {
    std::string iters, bits;
    if (row.iters_to_target) {
      std::snprintf(buf, sizeof(buf), "%.17g", *row.iters_to_target);
      iters = buf;
    }
    if (row.bits_to_target) {
      std::snprintf(buf, sizeof(buf), "%.17g", *row.bits_to_target);
      bits = buf;
    }
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g", row.gamma, row.final_loss);
    out += row.algorithm + "," + buf + "," + iters + "," + bits + "\n";
  }
  return out;
}

namespace {

int run_or_compare(const std::string& config_path, const std::optional<std::string>& outdir,
                   bool with_comparison) {
  config::ExperimentConfig cfg;
  try {
    cfg = config::load_toml(config_path);
    if (outdir) cfg.outdir = *outdir;
    if (with_comparison && cfg.algorithms.size() < 2)
      throw config::ConfigError("compare needs at least two [[algorithms]] blocks");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  try {
    const auto result = run_experiment(cfg, true);
    for (const auto& cell : result.cells)
      std::cout << cell.algorithm << " gamma=" << cell.gamma << " seed=" << cell.seed
                << " status=" << status_name(cell.status)
                << " final_loss=" << cell.final_loss << "\n";
    if (with_comparison) {
      const auto rows = compare(result, cfg);
      const std::string csv = comparison_csv(rows);
      write_atomic(std::filesystem::path(cfg.outdir) / "comparison.csv", csv);
      std::cout << csv;
    }
    return result.any_diverged ? 2 : 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int cmd_run(const std::string& config_path, const std::optional<std::string>& outdir) {
  return run_or_compare(config_path, outdir, false);
}

int cmd_compare(const std::string& config_path, const std::optional<std::string>& outdir) {
  return run_or_compare(config_path, outdir, true);
}

}  // namespace dsq::experiment
