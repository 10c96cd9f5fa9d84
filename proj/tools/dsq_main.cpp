// dsq — deterministic simulator for error-compensated decentralized SGD.
//
// Subcommands:
//   run             execute every (algorithm, gamma, seed) cell of a config
//   compare         run all cells and rank algorithms by tuned final loss
//   spectrum        print mixing-matrix eigenvalues as CSV, descending
//   calibrate-alpha measure a compressor's signal-to-noise ratio
//   verify          oracle equivalence, closed forms, and lemma monitors
//
// Exit codes: 0 success, 1 configuration error, 2 diverged cell, 3 failed
// verification.

#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>

#include "dsq/config.hpp"
#include "dsq/experiment.hpp"
#include "dsq/verify.hpp"

namespace {

int cmd_spectrum(const std::optional<long>& ring, const std::optional<long>& complete,
                 const std::optional<std::string>& config_path) {
  try {
    dsq::topology::MixingMatrix W;
    if (ring) {
      W = dsq::topology::build_ring(*ring);
    } else if (complete) {
      W = dsq::topology::build_complete(*complete);
    } else if (config_path) {
      W = dsq::config::build_topology(dsq::config::load_topology(*config_path));
    } else {
      std::fprintf(stderr, "spectrum: pass --ring N, --complete N, or --config PATH\n");
      return 1;
    }
    dsq::topology::validate(W);
    const auto info = dsq::topology::spectral(W);
    for (dsq::Index i = 0; i < info.eigenvalues.size(); ++i)
      std::printf("%.17g\n", info.eigenvalues[i]);
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "spectrum: %s\n", e.what());
    return 1;
  }
}

int cmd_calibrate(const std::optional<long>& topk, const std::optional<long>& randk,
                  const std::optional<int>& bits, bool identity, long dim, int samples,
                  std::uint64_t seed) {
  try {
    dsq::compression::CompressorSpec spec;
    if (topk) spec = dsq::compression::CompressorSpec::topk(*topk);
    else if (randk) spec = dsq::compression::CompressorSpec::randk(*randk);
    else if (bits) spec = dsq::compression::CompressorSpec::bit_quant(*bits);
    else if (identity) spec = dsq::compression::CompressorSpec::identity();
    else {
      std::fprintf(stderr,
                   "calibrate-alpha: pass --topk K, --randk K, --bits B, or --identity\n");
      return 1;
    }
    dsq::RandomStream rng = dsq::substream(seed, dsq::StreamKind::Calibrate);
    const auto est = dsq::compression::empirical_alpha(spec, dim, samples, rng);
    std::printf("kind,%s\n", dsq::compression::kind_name(spec.kind));
    std::printf("mean_ratio,%.17g\n", est.mean_ratio);
    std::printf("max_ratio,%.17g\n", est.max_ratio);
    std::printf("alpha_mean,%.17g\n", std::sqrt(est.mean_ratio));
    std::printf("alpha_max,%.17g\n", std::sqrt(est.max_ratio));
    return 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "calibrate-alpha: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic simulator for error-compensated decentralized SGD"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::string> outdir;

  auto* run = app.add_subcommand("run", "execute every (algorithm, gamma, seed) cell");
  run->add_option("--config", config_path, "TOML experiment config")->required();
  run->add_option("--outdir", outdir, "override the config's output directory");

  auto* comparecmd = app.add_subcommand("compare", "run all cells and rank algorithms");
  comparecmd->add_option("--config", config_path, "TOML experiment config")->required();
  comparecmd->add_option("--outdir", outdir, "override the config's output directory");

  std::optional<long> ring, complete;
  std::optional<std::string> spectrum_config;
  auto* spectrum = app.add_subcommand("spectrum", "print eigenvalues as CSV, descending");
  spectrum->add_option("--ring", ring, "uniform ring of N workers");
  spectrum->add_option("--complete", complete, "complete averaging over N workers");
  spectrum->add_option("--config", spectrum_config, "topology block of a TOML config");

  std::optional<long> topk, randk;
  std::optional<int> bits;
  bool identity = false;
  long dim = 32;
  int samples = 10000;
  std::uint64_t cal_seed = 1;
  auto* calibrate = app.add_subcommand("calibrate-alpha",
                                       "measure a compressor's signal-to-noise ratio");
  calibrate->add_option("--topk", topk, "keep the K largest magnitudes");
  calibrate->add_option("--randk", randk, "keep K uniformly chosen coordinates");
  calibrate->add_option("--bits", bits, "B-bit quantization with norm restoration");
  calibrate->add_flag("--identity", identity, "no compression");
  calibrate->add_option("--dim", dim, "vector dimension");
  calibrate->add_option("--samples", samples, "standard-normal draws");
  calibrate->add_option("--seed", cal_seed, "stream seed");

  std::string preset = "desk";
  std::uint64_t verify_seed = 7;
  std::string verify_csv_path;
  auto* verifycmd = app.add_subcommand("verify",
                                       "oracle equivalence and lemma monitors");
  verifycmd->add_option("--preset", preset, "verification preset (desk)");
  verifycmd->add_option("--seed", verify_seed, "problem seed");
  verifycmd->add_option("--csv", verify_csv_path, "write the report as CSV");

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) return dsq::experiment::cmd_run(config_path, outdir);
  if (comparecmd->parsed()) return dsq::experiment::cmd_compare(config_path, outdir);
  if (spectrum->parsed()) return cmd_spectrum(ring, complete, spectrum_config);
  if (calibrate->parsed())
    return cmd_calibrate(topk, randk, bits, identity, dim, samples, cal_seed);
  if (verifycmd->parsed()) {
    if (preset != "desk") {
      std::fprintf(stderr, "verify: unknown preset '%s'\n", preset.c_str());
      return 1;
    }
    return dsq::verify::cmd_verify(verify_seed, verify_csv_path);
  }
  return 1;
}
