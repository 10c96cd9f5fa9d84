#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsq/compression.hpp"
#include "dsq/engine.hpp"
#include "dsq/problems.hpp"
#include "dsq/topology.hpp"
#include "dsq/types.hpp"

namespace dsq::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ProblemConfig {
  std::string kind = "quadratic";  // quadratic | logistic
  Index d = 32;
  Index m_per_node = 64;
  double heterogeneity = 0.5;  // quadratic synthetic
  double margin = 1.0;         // logistic synthetic class separation
  double noise_sigma = 0.0;
  double l2_reg = 0.0;
  std::uint64_t seed = 1;
  std::string libsvm_path;             // optional file-backed data
  std::string partition = "shuffled";  // shuffled | label_sorted
};

struct TopologyConfig {
  std::string kind = "ring";  // ring | complete | edges
  Index n = 8;
  std::vector<std::pair<Index, Index>> edges;
};

struct CompressorConfig {
  std::string kind = "identity";
  Index k = 0;
  int bits = 0;
};

struct AlgorithmConfig {
  std::string name;
  std::vector<double> gammas;
  double eta = 0.5;
  long T = 100;
  Index batch_size = 0;  // 0 = full batch
  std::vector<std::uint64_t> seeds;
  long eval_every = 1;
};

struct ExperimentConfig {
  ProblemConfig problem;
  TopologyConfig topology;
  CompressorConfig compressor;
  std::vector<AlgorithmConfig> algorithms;
  std::string outdir = "out";
  std::optional<double> target_loss;
  std::optional<engine::LrDecay> lr_decay;
};

ExperimentConfig parse_toml(const std::string& text);
ExperimentConfig load_toml(const std::string& path);

// Reads just the [topology] block; other sections may be absent or partial.
TopologyConfig parse_topology_toml(const std::string& text);
TopologyConfig load_topology(const std::string& path);

compression::CompressorSpec to_spec(const CompressorConfig& cfg);
topology::MixingMatrix build_topology(const TopologyConfig& cfg);
problems::ProblemSpec build_problem(const ProblemConfig& cfg, Index n_nodes);

}  // namespace dsq::config
