#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dsq/compression.hpp"
#include "dsq/engine.hpp"
#include "dsq/problems.hpp"
#include "dsq/topology.hpp"
#include "dsq/trace.hpp"
#include "dsq/types.hpp"

namespace dsq::oracle {

// Independent global-matrix replay of DeepSqueeze runs:
//   V_t     = X_t - gamma G_t + Delta_{t-1}
//   Delta_t = V_t - C[V_t]                       (column-wise)
//   X_{t+1} = (X_t - gamma G_t) W_eff + (Delta_{t-1} - Delta_t)(W_eff - I)
// consuming the same (seed, node, t)-keyed gradient and compressor draws as
// the node-wise engine, so the two trajectories must agree to rounding.

template <typename Scalar>
struct GlobalStateT {
  MatrixX<Scalar> X;           // d x n stacked models
  MatrixX<Scalar> Delta;       // errors generated this round
  MatrixX<Scalar> Delta_prev;  // previous round's errors; zero at t = 0
};
using GlobalState = GlobalStateT<double>;

inline engine::RunResult matrix_run(const engine::RunConfig& cfg,
                                    const problems::ProblemSpec& problem) {
  if (cfg.algorithm != engine::Algorithm::DeepSqueeze)
    throw std::invalid_argument("matrix_run: only DeepSqueeze has a matrix oracle");
  if (cfg.T < 1) throw std::invalid_argument("matrix_run: T must be >= 1");
  topology::validate(cfg.W);
  const Index n = cfg.W.n;
  const Index d = problem.dim;
  compression::validate_spec(cfg.compressor, d);
  const auto W_eff = topology::effective(cfg.W, cfg.eta);
  const MatrixX<double> W_eff_minus_I =
      W_eff.entries - MatrixX<double>::Identity(n, n);

  GlobalState state;
  state.X = MatrixX<double>::Zero(d, n);
  state.Delta = MatrixX<double>::Zero(d, n);
  state.Delta_prev = MatrixX<double>::Zero(d, n);

  engine::RunResult result;
  Trace& trace = result.trace;
  trace.bits_per_round = engine::bits_per_round(cfg, d);
  RunArtifacts& art = result.artifacts;
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
    art.deterministic_compressor = compression::is_deterministic(cfg.compressor.kind);
    art.noise_free = problem.noise_sigma == 0.0;
    art.full_batch = cfg.batch_size == 0;
    art.constant_gamma = !cfg.lr_decay || cfg.lr_decay->every <= 0 ||
                         cfg.lr_decay->factor == 1.0;
  }

  const auto batch_for = [&](Index node) {
    return cfg.batch_size == 0 ? problem.samples(node) : cfg.batch_size;
  };

  const auto record_at = [&](long t) {
    const VectorX<double> mean = state.X.rowwise().mean();
    TraceRecord rec;
    rec.t = t;
    rec.loss = problems::global_value(problem, mean);
    rec.grad_norm2 = problems::global_gradient(problem, mean).squaredNorm();
    for (Index i = 0; i < n; ++i) rec.consensus2 += (state.X.col(i) - mean).squaredNorm();
    rec.delta_mass = state.Delta_prev.squaredNorm();
    rec.bits_cum = static_cast<std::uint64_t>(t) * trace.bits_per_round;
    trace.records.push_back(rec);
  };

  for (long t = 0; t < cfg.T; ++t) {
    if (t % cfg.eval_every == 0) record_at(t);
    if (cfg.record_artifacts) {
      art.models.push_back(state.X);
      const VectorX<double> mean = state.X.rowwise().mean();
      double cons = 0;
      for (Index i = 0; i < n; ++i) cons += (state.X.col(i) - mean).squaredNorm();
      art.consensus2.push_back(cons);
      art.mean_grad_norm2.push_back(
          problems::global_gradient(problem, mean).squaredNorm());
      art.zeta2_at_mean.push_back(problems::outer_variance_at(problem, mean));
    }

    const double gamma_t = engine::detail::decayed_gamma(cfg, t);
    MatrixX<double> G(d, n);
    for (Index i = 0; i < n; ++i) {
      RandomStream rng = substream(cfg.seed, StreamKind::Gradient,
                                   static_cast<std::uint64_t>(i),
                                   static_cast<std::uint64_t>(t));
      G.col(i) = problems::grad_stochastic(problem, i, VectorX<double>(state.X.col(i)),
                                           batch_for(i), rng);
    }
    const MatrixX<double> descended = state.X - gamma_t * G;
    const MatrixX<double> V = descended + state.Delta_prev;
    for (Index i = 0; i < n; ++i) {
      RandomStream rng = substream(cfg.seed, StreamKind::Compress,
                                   static_cast<std::uint64_t>(i),
                                   static_cast<std::uint64_t>(t));
      const auto msg = compression::compress(cfg.compressor, VectorX<double>(V.col(i)), rng);
      state.Delta.col(i) = V.col(i) - msg.decoded;
      const double vn = V.col(i).squaredNorm();
      if (cfg.record_artifacts && vn > 0)
        art.max_compress_ratio2 = std::max(
            art.max_compress_ratio2, state.Delta.col(i).squaredNorm() / vn);
    }
    state.X = descended * W_eff.entries +
              (state.Delta_prev - state.Delta) * W_eff_minus_I;

    if (cfg.record_artifacts) {
      art.gradients.push_back(G);
      art.errors.push_back(state.Delta);
      art.grad_fro2.push_back(G.squaredNorm());
      art.err_weff_fro2.push_back((state.Delta * W_eff_minus_I).squaredNorm());
      art.steps = t + 1;
    }

    state.Delta_prev = state.Delta;

    if (!state.X.allFinite() || state.X.cwiseAbs().maxCoeff() > cfg.divergence_limit) {
      trace.status = RunStatus::Diverged;
      trace.diverged_at = t;
      trace.steps = t + 1;
      return result;
    }
    trace.steps = t + 1;
  }
  record_at(cfg.T);
  if (cfg.record_artifacts) art.models.push_back(state.X);
  return result;
}

// Exact unrolling of the recursion from X_0 = 0:
//   X_t = -gamma sum_{s<t} G_s W_eff^{t-s} - Delta_{t-1}(W_eff - I)
//         - sum_{s<=t-2} Delta_s (W_eff - I)^2 W_eff^{t-2-s}
// Returns ||X_t^closed - X_t^recursion||_F / max(1, ||X_t||_F).
inline double closed_form_check(const RunArtifacts& art, long t) {
  if (t < 1 || t > art.steps)
    throw std::invalid_argument("closed_form_check: t outside stored horizon");
  const Index n = static_cast<Index>(art.n);
  const MatrixX<double> I = MatrixX<double>::Identity(n, n);
  const MatrixX<double> D = art.W_eff - I;
  std::vector<MatrixX<double>> powers(static_cast<std::size_t>(t) + 1);
  powers[0] = I;
  for (long p = 1; p <= t; ++p) powers[static_cast<std::size_t>(p)] =
      powers[static_cast<std::size_t>(p - 1)] * art.W_eff;

  MatrixX<double> closed = MatrixX<double>::Zero(art.d, n);
  for (long s = 0; s < t; ++s) {
    // scale per element before the product, matching the recursion's
    // (X - gamma G) evaluation so the t = 1 term is bit-identical
    const MatrixX<double> scaled = art.gamma * art.gradients[static_cast<std::size_t>(s)];
    closed -= scaled * powers[static_cast<std::size_t>(t - s)];
  }
  closed -= art.errors[static_cast<std::size_t>(t - 1)] * D;
  const MatrixX<double> D2 = D * D;
  for (long s = 0; s + 2 <= t; ++s)
    closed -= art.errors[static_cast<std::size_t>(s)] * D2 *
              powers[static_cast<std::size_t>(t - 2 - s)];

  const MatrixX<double>& actual = art.models[static_cast<std::size_t>(t)];
  return (closed - actual).norm() / std::max(1.0, actual.norm());
}

// Max closed-form deviation over 1 <= t <= t_max.
inline double closed_form_max_deviation(const RunArtifacts& art, long t_max) {
  double worst = 0;
  for (long t = 1; t <= std::min(t_max, art.steps); ++t)
    worst = std::max(worst, closed_form_check(art, t));
  return worst;
}

struct ConsensusDecay {
  std::vector<double> ratios;  // per-step ||X_{t+1}(I-A)|| / ||X_t(I-A)||
  double lambda_bar = 0;       // max(|lambda_2|, |lambda_n|) of W_eff
  bool within_bound = true;    // ||X_t(I-A)|| <= lambda_bar^t ||X_0(I-A)|| + 1e-10
};

// Gossip-only contraction: with zero gradients and no compression the
// disagreement must contract at least as fast as lambda_bar^t.
inline ConsensusDecay consensus_decay_check(const topology::MixingMatrix& W_eff,
                                            const MatrixX<double>& X0, long steps) {
  const Index n = W_eff.n;
  const auto info = topology::spectral(W_eff);
  ConsensusDecay out;
  out.lambda_bar = std::max(std::abs(info.lambda2), std::abs(info.lambda_n));
  const MatrixX<double> A = MatrixX<double>::Constant(n, n, 1.0 / static_cast<double>(n));
  const MatrixX<double> P = MatrixX<double>::Identity(n, n) - A;
  MatrixX<double> X = X0;
  const double base = (X * P).norm();
  double bound = base;
  for (long t = 0; t < steps; ++t) {
    const double before = (X * P).norm();
    X = X * W_eff.entries;
    const double after = (X * P).norm();
    out.ratios.push_back(before > 0 ? after / before : 0.0);
    bound *= out.lambda_bar;
    if (after > bound + 1e-10 * std::max(1.0, base)) out.within_bound = false;
  }
  return out;
}

// Engine/oracle (or any two recorded runs) elementwise agreement:
// max over t and entries of |a - b| / max(1, |a|, |b|).
inline double trajectory_deviation(const RunArtifacts& a, const RunArtifacts& b) {
  const std::size_t steps = std::min(a.models.size(), b.models.size());
  double worst = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto& Xa = a.models[t];
    const auto& Xb = b.models[t];
    for (Index c = 0; c < Xa.cols(); ++c)
      for (Index r = 0; r < Xa.rows(); ++r) {
        const double denom = std::max({1.0, std::abs(Xa(r, c)), std::abs(Xb(r, c))});
        worst = std::max(worst, std::abs(Xa(r, c) - Xb(r, c)) / denom);
      }
  }
  return worst;
}

}  // namespace dsq::oracle
