#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsq/compression.hpp"
#include "dsq/problems.hpp"
#include "dsq/rng.hpp"
#include "dsq/topology.hpp"
#include "dsq/trace.hpp"
#include "dsq/types.hpp"

namespace dsq::engine {

// Per-node state machines for DeepSqueeze and its baselines over synchronized
// message rounds.  Within a round every node reads only the time-t snapshot
// and all writes commit at the barrier, so the result is independent of node
// evaluation order.

enum class Algorithm { DeepSqueeze, DPSGD, DCDPSGD, ChocoSGD, CentralSGD };

inline const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::DeepSqueeze: return "DeepSqueeze";
    case Algorithm::DPSGD: return "DPSGD";
    case Algorithm::DCDPSGD: return "DCDPSGD";
    case Algorithm::ChocoSGD: return "ChocoSGD";
    case Algorithm::CentralSGD: return "CentralSGD";
  }
  return "unknown";
}

inline Algorithm parse_algorithm(const std::string& name) {
  if (name == "DeepSqueeze") return Algorithm::DeepSqueeze;
  if (name == "DPSGD") return Algorithm::DPSGD;
  if (name == "DCDPSGD") return Algorithm::DCDPSGD;
  if (name == "ChocoSGD") return Algorithm::ChocoSGD;
  if (name == "CentralSGD") return Algorithm::CentralSGD;
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

inline bool uses_compressor(Algorithm a) {
  return a == Algorithm::DeepSqueeze || a == Algorithm::DCDPSGD ||
         a == Algorithm::ChocoSGD;
}

struct LrDecay {
  long every = 0;       // rounds between decays; 0 disables
  double factor = 1.0;  // multiplier applied at each decay
};

struct RunConfig {
  Algorithm algorithm = Algorithm::DeepSqueeze;
  double gamma = 0.1;  // learning rate
  double eta = 0.5;    // averaging rate in [0, 1]
  long T = 100;
  Index batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 1;
  topology::MixingMatrix W;
  compression::CompressorSpec compressor{};
  long eval_every = 1;
  std::optional<LrDecay> lr_decay{};
  double divergence_limit = 1e12;
  bool record_artifacts = false;
};

template <typename Scalar>
struct NodeStateT {
  VectorX<Scalar> x;      // local model
  VectorX<Scalar> delta;  // compression error carried to the next round
  std::vector<std::pair<Index, compression::CompressedMessageT<Scalar>>> inbox;
};
using NodeState = NodeStateT<double>;

template <typename Scalar>
using GradFn = std::function<VectorX<Scalar>(Index node, const VectorX<Scalar>& x)>;

using CompressStreamFn = std::function<RandomStream(Index node)>;

template <typename Scalar>
struct StepStats {
  MatrixX<Scalar> gradients;  // G_t (column per node)
  MatrixX<Scalar> errors;     // compression errors generated this round
  double max_ratio2 = 0;      // max ||C[v]-v||^2 / ||v||^2 this round
};

namespace detail {

template <typename Scalar>
void note_ratio(StepStats<Scalar>* stats, const VectorX<Scalar>& v,
                const VectorX<Scalar>& err) {
  if (!stats) return;
  const double vn = static_cast<double>(v.squaredNorm());
  if (vn > 0)
    stats->max_ratio2 = std::max(stats->max_ratio2,
                                 static_cast<double>(err.squaredNorm()) / vn);
}

}  // namespace detail

// Error-compensated update: v = x - gamma g + delta; message m = C[v];
// delta' = v - m; x' = x - gamma g + eta sum_j (W_ij - I_ij) m_j
// (the self term uses the compressed self value).
template <typename Scalar>
void step_deepsqueeze(std::vector<NodeStateT<Scalar>>& states,
                      const topology::MixingMatrixT<Scalar>& W, Scalar gamma,
                      Scalar eta, const compression::CompressorSpec& comp,
                      const GradFn<Scalar>& grad, const CompressStreamFn& streams,
                      StepStats<Scalar>* stats = nullptr) {
  const Index n = static_cast<Index>(states.size());
  const Index d = states[0].x.size();
  std::vector<VectorX<Scalar>> g(static_cast<std::size_t>(n));
  std::vector<compression::CompressedMessageT<Scalar>> msg(static_cast<std::size_t>(n));
  std::vector<VectorX<Scalar>> delta_next(static_cast<std::size_t>(n));
  if (stats) {
    stats->gradients.resize(d, n);
    stats->errors.resize(d, n);
  }
  for (Index i = 0; i < n; ++i) {
    auto& node = states[static_cast<std::size_t>(i)];
    g[static_cast<std::size_t>(i)] = grad(i, node.x);
    const VectorX<Scalar> v = node.x - gamma * g[static_cast<std::size_t>(i)] + node.delta;
    RandomStream rng = streams(i);
    msg[static_cast<std::size_t>(i)] = compression::compress(comp, v, rng);
    delta_next[static_cast<std::size_t>(i)] = v - msg[static_cast<std::size_t>(i)].decoded;
    detail::note_ratio(stats, v, delta_next[static_cast<std::size_t>(i)]);
    if (stats) {
      stats->gradients.col(i) = g[static_cast<std::size_t>(i)];
      stats->errors.col(i) = delta_next[static_cast<std::size_t>(i)];
    }
  }
  for (Index i = 0; i < n; ++i) {
    auto& node = states[static_cast<std::size_t>(i)];
    node.inbox.clear();
    for (Index j = 0; j < n; ++j)
      if (W.entries(i, j) != Scalar(0) || i == j)
        node.inbox.emplace_back(j, msg[static_cast<std::size_t>(j)]);
  }
  std::vector<VectorX<Scalar>> x_next(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& node = states[static_cast<std::size_t>(i)];
    VectorX<Scalar> acc = VectorX<Scalar>::Zero(d);
    for (const auto& [j, m] : node.inbox) {
      const Scalar w = W.entries(i, j) - (i == j ? Scalar(1) : Scalar(0));
      acc += w * m.decoded;
    }
    x_next[static_cast<std::size_t>(i)] =
        node.x - gamma * g[static_cast<std::size_t>(i)] + eta * acc;
  }
  for (Index i = 0; i < n; ++i) {
    states[static_cast<std::size_t>(i)].x = std::move(x_next[static_cast<std::size_t>(i)]);
    states[static_cast<std::size_t>(i)].delta = std::move(delta_next[static_cast<std::size_t>(i)]);
  }
}

// Descend-then-gossip with W_eff: x_i' = sum_j (W_eff)_ij (x_j - gamma g_j).
template <typename Scalar>
void step_dpsgd(std::vector<NodeStateT<Scalar>>& states,
                const topology::MixingMatrixT<Scalar>& W, Scalar gamma, Scalar eta,
                const GradFn<Scalar>& grad, StepStats<Scalar>* stats = nullptr) {
  const Index n = static_cast<Index>(states.size());
  const Index d = states[0].x.size();
  const auto W_eff = topology::effective(W, eta);
  std::vector<VectorX<Scalar>> y(static_cast<std::size_t>(n));
  if (stats) {
    stats->gradients.resize(d, n);
    stats->errors = MatrixX<Scalar>::Zero(d, n);
  }
  for (Index i = 0; i < n; ++i) {
    const VectorX<Scalar> g = grad(i, states[static_cast<std::size_t>(i)].x);
    if (stats) stats->gradients.col(i) = g;
    y[static_cast<std::size_t>(i)] = states[static_cast<std::size_t>(i)].x - gamma * g;
  }
  std::vector<VectorX<Scalar>> x_next(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    VectorX<Scalar> acc = VectorX<Scalar>::Zero(d);
    for (Index j = 0; j < n; ++j) acc += W_eff.entries(i, j) * y[static_cast<std::size_t>(j)];
    x_next[static_cast<std::size_t>(i)] = std::move(acc);
  }
  for (Index i = 0; i < n; ++i)
    states[static_cast<std::size_t>(i)].x = std::move(x_next[static_cast<std::size_t>(i)]);
}

// Model-difference sharing without error memory.  Every holder keeps an
// identical replica x_hat_j of each neighbour; the new model is the W_eff
// average of the updated replicas, so compression error enters the iteration
// undamped (no W_eff - I factor), which is what makes this baseline fragile
// under aggressive compression.
//   x_half = x - gamma g;  q = C[x_half - x_hat];  x_hat += decode(q);
//   x' = sum_j (W_eff)_ij x_hat_j.
template <typename Scalar>
void step_dcd_psgd(std::vector<NodeStateT<Scalar>>& states, MatrixX<Scalar>& replicas,
                   const topology::MixingMatrixT<Scalar>& W, Scalar gamma, Scalar eta,
                   const compression::CompressorSpec& comp, const GradFn<Scalar>& grad,
                   const CompressStreamFn& streams, StepStats<Scalar>* stats = nullptr) {
  const Index n = static_cast<Index>(states.size());
  const Index d = states[0].x.size();
  const auto W_eff = topology::effective(W, eta);
  if (stats) {
    stats->gradients.resize(d, n);
    stats->errors.resize(d, n);
  }
  for (Index i = 0; i < n; ++i) {
    auto& node = states[static_cast<std::size_t>(i)];
    const VectorX<Scalar> g = grad(i, node.x);
    if (stats) stats->gradients.col(i) = g;
    const VectorX<Scalar> half = node.x - gamma * g;
    const VectorX<Scalar> diff = half - replicas.col(i);
    RandomStream rng = streams(i);
    const auto q = compression::compress(comp, diff, rng);
    detail::note_ratio(stats, diff, VectorX<Scalar>(diff - q.decoded));
    if (stats) stats->errors.col(i) = diff - q.decoded;
    replicas.col(i) += q.decoded;
  }
  std::vector<VectorX<Scalar>> x_next(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    VectorX<Scalar> acc = VectorX<Scalar>::Zero(d);
    for (Index j = 0; j < n; ++j) acc += W_eff.entries(i, j) * replicas.col(j);
    x_next[static_cast<std::size_t>(i)] = std::move(acc);
  }
  for (Index i = 0; i < n; ++i)
    states[static_cast<std::size_t>(i)].x = std::move(x_next[static_cast<std::size_t>(i)]);
}

// Difference-of-model-difference sharing: replicas are updated first, then
// the model takes a gossip step on the replicas, giving the compression error
// one W_eff - I damping factor.
//   x_half = x - gamma g;  q = C[x_half - x_hat];  x_hat += decode(q);
//   x' = x_half + eta sum_j W_ij (x_hat_j - x_hat_i).
template <typename Scalar>
void step_choco_sgd(std::vector<NodeStateT<Scalar>>& states, MatrixX<Scalar>& replicas,
                    const topology::MixingMatrixT<Scalar>& W, Scalar gamma, Scalar eta,
                    const compression::CompressorSpec& comp, const GradFn<Scalar>& grad,
                    const CompressStreamFn& streams, StepStats<Scalar>* stats = nullptr) {
  const Index n = static_cast<Index>(states.size());
  const Index d = states[0].x.size();
  if (stats) {
    stats->gradients.resize(d, n);
    stats->errors.resize(d, n);
  }
  std::vector<VectorX<Scalar>> half(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    auto& node = states[static_cast<std::size_t>(i)];
    const VectorX<Scalar> g = grad(i, node.x);
    if (stats) stats->gradients.col(i) = g;
    half[static_cast<std::size_t>(i)] = node.x - gamma * g;
    const VectorX<Scalar> diff = half[static_cast<std::size_t>(i)] - replicas.col(i);
    RandomStream rng = streams(i);
    const auto q = compression::compress(comp, diff, rng);
    detail::note_ratio(stats, diff, VectorX<Scalar>(diff - q.decoded));
    if (stats) stats->errors.col(i) = diff - q.decoded;
    replicas.col(i) += q.decoded;
  }
  std::vector<VectorX<Scalar>> x_next(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    VectorX<Scalar> acc = VectorX<Scalar>::Zero(d);
    for (Index j = 0; j < n; ++j)
      acc += W.entries(i, j) * (replicas.col(j) - replicas.col(i));
    x_next[static_cast<std::size_t>(i)] = half[static_cast<std::size_t>(i)] + eta * acc;
  }
  for (Index i = 0; i < n; ++i)
    states[static_cast<std::size_t>(i)].x = std::move(x_next[static_cast<std::size_t>(i)]);
}

// AllReduce baseline: every node holds x_bar - (gamma/n) sum_i g_i.
template <typename Scalar>
void step_central(std::vector<NodeStateT<Scalar>>& states, Scalar gamma,
                  const GradFn<Scalar>& grad, StepStats<Scalar>* stats = nullptr) {
  const Index n = static_cast<Index>(states.size());
  const Index d = states[0].x.size();
  VectorX<Scalar> mean_x = VectorX<Scalar>::Zero(d);
  VectorX<Scalar> mean_g = VectorX<Scalar>::Zero(d);
  if (stats) {
    stats->gradients.resize(d, n);
    stats->errors = MatrixX<Scalar>::Zero(d, n);
  }
  for (Index i = 0; i < n; ++i) {
    const auto& node = states[static_cast<std::size_t>(i)];
    const VectorX<Scalar> g = grad(i, node.x);
    if (stats) stats->gradients.col(i) = g;
    mean_x += node.x;
    mean_g += g;
  }
  mean_x /= static_cast<Scalar>(n);
  mean_g /= static_cast<Scalar>(n);
  const VectorX<Scalar> next = mean_x - gamma * mean_g;
  for (auto& node : states) node.x = next;
}

struct RunResult {
  Trace trace;
  RunArtifacts artifacts;  // populated when config.record_artifacts
};

namespace detail {

inline double decayed_gamma(const RunConfig& cfg, long t) {
  if (!cfg.lr_decay || cfg.lr_decay->every <= 0) return cfg.gamma;
  return cfg.gamma * std::pow(cfg.lr_decay->factor, static_cast<double>(t / cfg.lr_decay->every));
}

template <typename Scalar>
bool state_finite(const std::vector<NodeStateT<Scalar>>& states, double limit) {
  for (const auto& node : states) {
    if (!node.x.allFinite() || node.x.cwiseAbs().maxCoeff() > limit) return false;
    if (node.delta.size() > 0 &&
        (!node.delta.allFinite() || node.delta.cwiseAbs().maxCoeff() > limit))
      return false;
  }
  return true;
}

}  // namespace detail

inline std::uint64_t bits_per_round(const RunConfig& cfg, Index d) {
  const Index n = cfg.W.n;
  if (uses_compressor(cfg.algorithm))
    return static_cast<std::uint64_t>(n) * compression::message_bits(cfg.compressor, d);
  return static_cast<std::uint64_t>(n) * 32ull * static_cast<std::uint64_t>(d);
}

// Executes T synchronized rounds from X_0 = 0; records a TraceRecord every
// eval_every steps and at t in {0, T}.  Identical (config, problem) inputs
// reproduce a bit-identical trace.  Divergence (any coordinate non-finite or
// beyond divergence_limit) is a recorded outcome: the partial trace is
// retained with status Diverged.
inline RunResult run(const RunConfig& cfg, const problems::ProblemSpec& problem) {
  if (cfg.T < 1) throw std::invalid_argument("run: T must be >= 1");
  if (cfg.eval_every < 1) throw std::invalid_argument("run: eval_every must be >= 1");
  if (!(cfg.gamma > 0)) throw std::invalid_argument("run: gamma must be > 0");
  if (!(cfg.eta >= 0 && cfg.eta <= 1))
    throw std::invalid_argument("run: eta must lie in [0, 1]");
  topology::validate(cfg.W);
  if (cfg.W.n != problem.n_nodes)
    throw std::invalid_argument("run: topology size does not match problem nodes");
  const Index n = cfg.W.n;
  const Index d = problem.dim;
  if (uses_compressor(cfg.algorithm)) compression::validate_spec(cfg.compressor, d);
  for (Index i = 0; i < n; ++i)
    if (cfg.batch_size > problem.samples(i))
      throw std::invalid_argument("run: batch_size exceeds node sample count");

  std::vector<NodeState> states(static_cast<std::size_t>(n));
  for (auto& node : states) {
    node.x = VectorX<double>::Zero(d);
    node.delta = VectorX<double>::Zero(d);
  }
  MatrixX<double> replicas = MatrixX<double>::Zero(d, n);

  RunResult result;
  Trace& trace = result.trace;
  trace.bits_per_round = bits_per_round(cfg, d);

  RunArtifacts& art = result.artifacts;
  const auto W_eff = topology::effective(cfg.W, cfg.eta);
  if (cfg.record_artifacts) {
    art.W = cfg.W.entries;
    art.W_eff = W_eff.entries;
    const auto ws = topology::spectral(cfg.W);
    const auto es = topology::spectral(W_eff);
    art.lambda2_W = ws.lambda2;
    art.lambdaN_W = ws.lambda_n;
    art.lambda2_eff = es.lambda2;
    art.lambdaN_eff = es.lambda_n;
    art.gamma = cfg.gamma;
    art.eta = cfg.eta;
    art.n = n;
    art.d = d;
    art.deterministic_compressor =
        !uses_compressor(cfg.algorithm) ||
        compression::is_deterministic(cfg.compressor.kind);
    art.noise_free = problem.noise_sigma == 0.0;
    art.full_batch = cfg.batch_size == 0;
    art.constant_gamma = !cfg.lr_decay || cfg.lr_decay->every <= 0 ||
                         cfg.lr_decay->factor == 1.0;
  }

  const auto batch_for = [&](Index node) {
    return cfg.batch_size == 0 ? problem.samples(node) : cfg.batch_size;
  };

  const auto snapshot_matrix = [&]() {
    MatrixX<double> X(d, n);
    for (Index i = 0; i < n; ++i) X.col(i) = states[static_cast<std::size_t>(i)].x;
    return X;
  };

  const auto record_at = [&](long t) {
    VectorX<double> mean = VectorX<double>::Zero(d);
    for (const auto& node : states) mean += node.x;
    mean /= static_cast<double>(n);
    TraceRecord rec;
    rec.t = t;
    rec.loss = problems::global_value(problem, mean);
    rec.grad_norm2 = problems::global_gradient(problem, mean).squaredNorm();
    for (const auto& node : states) rec.consensus2 += (node.x - mean).squaredNorm();
    for (const auto& node : states) rec.delta_mass += node.delta.squaredNorm();
    rec.bits_cum = static_cast<std::uint64_t>(t) * trace.bits_per_round;
    trace.records.push_back(rec);
  };

  const auto record_artifacts_pre = [&](long t) {
    if (!cfg.record_artifacts) return;
    const MatrixX<double> X = snapshot_matrix();
    art.models.push_back(X);
    VectorX<double> mean = X.rowwise().mean();
    double cons = 0;
    for (Index i = 0; i < n; ++i) cons += (X.col(i) - mean).squaredNorm();
    art.consensus2.push_back(cons);
    art.mean_grad_norm2.push_back(problems::global_gradient(problem, mean).squaredNorm());
    art.zeta2_at_mean.push_back(problems::outer_variance_at(problem, mean));
    (void)t;
  };

  for (long t = 0; t < cfg.T; ++t) {
    if (t % cfg.eval_every == 0) record_at(t);
    record_artifacts_pre(t);

    const double gamma_t = detail::decayed_gamma(cfg, t);
    const GradFn<double> grad = [&](Index node, const VectorX<double>& x) {
      RandomStream rng = substream(cfg.seed, StreamKind::Gradient,
                                   static_cast<std::uint64_t>(node),
                                   static_cast<std::uint64_t>(t));
      return problems::grad_stochastic(problem, node, x, batch_for(node), rng);
    };
    const CompressStreamFn streams = [&](Index node) {
      return substream(cfg.seed, StreamKind::Compress,
                       static_cast<std::uint64_t>(node),
                       static_cast<std::uint64_t>(t));
    };

    StepStats<double> stats;
    StepStats<double>* sp = cfg.record_artifacts ? &stats : nullptr;
    switch (cfg.algorithm) {
      case Algorithm::DeepSqueeze:
        step_deepsqueeze(states, cfg.W, gamma_t, cfg.eta, cfg.compressor, grad,
                         streams, sp);
        break;
      case Algorithm::DPSGD:
        step_dpsgd(states, cfg.W, gamma_t, cfg.eta, grad, sp);
        break;
      case Algorithm::DCDPSGD:
        step_dcd_psgd(states, replicas, cfg.W, gamma_t, cfg.eta, cfg.compressor,
                      grad, streams, sp);
        break;
      case Algorithm::ChocoSGD:
        step_choco_sgd(states, replicas, cfg.W, gamma_t, cfg.eta, cfg.compressor,
                       grad, streams, sp);
        break;
      case Algorithm::CentralSGD:
        step_central(states, gamma_t, grad, sp);
        break;
    }

    if (cfg.record_artifacts) {
      art.gradients.push_back(stats.gradients);
      art.errors.push_back(stats.errors);
      art.grad_fro2.push_back(stats.gradients.squaredNorm());
      art.err_weff_fro2.push_back(
          (stats.errors * (W_eff.entries - MatrixX<double>::Identity(n, n)))
              .squaredNorm());
      art.max_compress_ratio2 = std::max(art.max_compress_ratio2, stats.max_ratio2);
      art.steps = t + 1;
    }

    if (!detail::state_finite(states, cfg.divergence_limit)) {
      trace.status = RunStatus::Diverged;
      trace.diverged_at = t;
      trace.steps = t + 1;
      return result;
    }
    trace.steps = t + 1;
  }
  record_at(cfg.T);
  if (cfg.record_artifacts) art.models.push_back(snapshot_matrix());
  return result;
}

}  // namespace dsq::engine
