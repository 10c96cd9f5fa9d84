#pragma once

#include <Eigen/Dense>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsq/types.hpp"

namespace dsq::topology {

// Gossip mixing matrix W: symmetric, doubly stochastic, connected
// (lambda_2 < 1 strictly).  W_eff = (1-eta) I + eta W is its damped form.

inline constexpr double kRowSumTol = 1e-12;
inline constexpr double kConnectivityTol = 1e-12;

template <typename Scalar>
struct MixingMatrixT {
  Index n{0};
  MatrixX<Scalar> entries;  // n x n
};
using MixingMatrix = MixingMatrixT<double>;

template <typename Scalar>
struct SpectralInfoT {
  VectorX<Scalar> eigenvalues;  // sorted descending; eigenvalues[0] == 1
  Scalar lambda2{};             // second largest; 0 when n == 1 (no disagreement mode)
  Scalar lambda_n{};            // smallest;       0 when n == 1
  Scalar gap{};                 // 1 - lambda2
};
using SpectralInfo = SpectralInfoT<double>;

enum class Violation { Asymmetric, RowSum, NegativeEntry, Disconnected };

inline const char* violation_name(Violation v) {
  switch (v) {
    case Violation::Asymmetric: return "asymmetric";
    case Violation::RowSum: return "row-sum";
    case Violation::NegativeEntry: return "negative-entry";
    case Violation::Disconnected: return "disconnected";
  }
  return "unknown";
}

struct ValidationIssue {
  Violation kind;
  std::string detail;
};

class TopologyError : public std::runtime_error {
 public:
  explicit TopologyError(const std::string& msg,
                         std::vector<ValidationIssue> issues = {})
      : std::runtime_error(msg), issues_(std::move(issues)) {}
  const std::vector<ValidationIssue>& issues() const { return issues_; }

 private:
  std::vector<ValidationIssue> issues_;
};

// Full symmetric eigendecomposition, eigenvalues sorted descending.
// Intended for validated W (or anything exactly symmetric).
template <typename Scalar>
SpectralInfoT<Scalar> spectral(const MixingMatrixT<Scalar>& W) {
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> solver(W.entries,
                                                        Eigen::EigenvaluesOnly);
  if (solver.info() != Eigen::Success)
    throw std::runtime_error("spectral: eigensolver did not converge");
  SpectralInfoT<Scalar> info;
  info.eigenvalues = solver.eigenvalues().reverse();
  const Index n = W.n;
  info.lambda2 = n > 1 ? info.eigenvalues[1] : Scalar(0);
  info.lambda_n = n > 1 ? info.eigenvalues[n - 1] : Scalar(0);
  info.gap = Scalar(1) - info.lambda2;
  return info;
}

// Checks every MixingMatrix invariant; returns one issue per violation.
// Symmetry is required bit-exactly as stored; row sums within 1e-12;
// connectivity as lambda_2 < 1 - 1e-12 (the quantity the theory consumes).
template <typename Scalar>
std::vector<ValidationIssue> check(const MixingMatrixT<Scalar>& W) {
  std::vector<ValidationIssue> issues;
  if (W.entries.rows() != W.n || W.entries.cols() != W.n || W.n < 1) {
    issues.push_back({Violation::RowSum, "entries are not a positive n x n array"});
    return issues;
  }
  bool symmetric = true;
  for (Index i = 0; i < W.n && symmetric; ++i)
    for (Index j = i + 1; j < W.n; ++j)
      if (W.entries(i, j) != W.entries(j, i)) {
        std::ostringstream os;
        os << "entries(" << i << "," << j << ") != entries(" << j << "," << i << ")";
        issues.push_back({Violation::Asymmetric, os.str()});
        symmetric = false;
        break;
      }
  bool stochastic = true;
  for (Index i = 0; i < W.n; ++i) {
    const Scalar sum = W.entries.row(i).sum();
    if (std::abs(static_cast<double>(sum) - 1.0) > kRowSumTol) {
      std::ostringstream os;
      os << "row " << i << " sums to " << static_cast<double>(sum);
      issues.push_back({Violation::RowSum, os.str()});
      stochastic = false;
      break;
    }
  }
  bool nonnegative = true;
  for (Index i = 0; i < W.n && nonnegative; ++i)
    for (Index j = 0; j < W.n; ++j)
      if (W.entries(i, j) < Scalar(0)) {
        std::ostringstream os;
        os << "entries(" << i << "," << j << ") = " << static_cast<double>(W.entries(i, j));
        issues.push_back({Violation::NegativeEntry, os.str()});
        nonnegative = false;
        break;
      }
  if (symmetric && stochastic && nonnegative && W.n > 1) {
    const auto info = spectral(W);
    if (static_cast<double>(info.lambda2) >= 1.0 - kConnectivityTol) {
      std::ostringstream os;
      os << "lambda_2 = " << static_cast<double>(info.lambda2);
      issues.push_back({Violation::Disconnected, os.str()});
    }
  }
  return issues;
}

// Throws TopologyError listing every violated invariant.
template <typename Scalar>
void validate(const MixingMatrixT<Scalar>& W) {
  auto issues = check(W);
  if (issues.empty()) return;
  std::ostringstream os;
  os << "invalid mixing matrix:";
  for (const auto& it : issues) os << " [" << violation_name(it.kind) << "] " << it.detail << ";";
  throw TopologyError(os.str(), std::move(issues));
}

// Uniform ring: W_ii = 1/3 and 1/3 to each of the two ring neighbours.
// n = 2 merges the two neighbour slots ([[1/3, 2/3], [2/3, 1/3]]);
// n = 3 is the all-1/3 matrix.
template <typename Scalar = double>
MixingMatrixT<Scalar> build_ring(Index n) {
  if (n < 2) throw TopologyError("build_ring: n must be >= 2");
  const Scalar third = Scalar(1) / Scalar(3);
  MixingMatrixT<Scalar> W{n, MatrixX<Scalar>::Zero(n, n)};
  for (Index i = 0; i < n; ++i) {
    W.entries(i, i) = third;
    W.entries(i, (i + 1) % n) += third;
    W.entries(i, (i + n - 1) % n) += third;
  }
  return W;
}

// Complete averaging: all entries 1/n (A_n = 11^T / n).
template <typename Scalar = double>
MixingMatrixT<Scalar> build_complete(Index n) {
  if (n < 1) throw TopologyError("build_complete: n must be >= 1");
  return {n, MatrixX<Scalar>::Constant(n, n, Scalar(1) / Scalar(n))};
}

// Metropolis-Hastings weights on an undirected graph:
// W_ij = 1 / (1 + max(deg_i, deg_j)) for edges, diagonal fills the row to 1.
template <typename Scalar = double>
MixingMatrixT<Scalar> build_from_edges(Index n,
                                       const std::vector<std::pair<Index, Index>>& edges) {
  if (n < 1) throw TopologyError("build_from_edges: n must be >= 1");
  std::set<std::pair<Index, Index>> unique_edges;
  for (auto [a, b] : edges) {
    if (a == b) throw TopologyError("build_from_edges: self-loop edge supplied");
    if (a < 0 || b < 0 || a >= n || b >= n)
      throw TopologyError("build_from_edges: edge endpoint out of range");
    unique_edges.insert({std::min(a, b), std::max(a, b)});
  }
  std::vector<Index> degree(static_cast<std::size_t>(n), 0);
  for (auto [a, b] : unique_edges) {
    ++degree[static_cast<std::size_t>(a)];
    ++degree[static_cast<std::size_t>(b)];
  }
  MixingMatrixT<Scalar> W{n, MatrixX<Scalar>::Zero(n, n)};
  for (auto [a, b] : unique_edges) {
    const Scalar w = Scalar(1) /
        Scalar(1 + std::max(degree[static_cast<std::size_t>(a)],
                            degree[static_cast<std::size_t>(b)]));
    W.entries(a, b) = w;
    W.entries(b, a) = w;
  }
  for (Index i = 0; i < n; ++i)
    W.entries(i, i) = Scalar(1) - (W.entries.row(i).sum() - W.entries(i, i));
  validate(W);  // disconnected graphs surface here via lambda_2
  return W;
}

// W_eff = (1 - eta) I + eta W.  Eigenvalues map affinely:
// lambda_i(W_eff) = 1 - eta + eta lambda_i(W).
template <typename Scalar>
MixingMatrixT<Scalar> effective(const MixingMatrixT<Scalar>& W, Scalar eta) {
  if (!(eta >= Scalar(0) && eta <= Scalar(1)))
    throw std::invalid_argument("effective: eta must lie in [0, 1]");
  MixingMatrixT<Scalar> out{W.n, (eta * W.entries).eval()};
  for (Index i = 0; i < W.n; ++i) out.entries(i, i) += Scalar(1) - eta;
  return out;
}

}  // namespace dsq::topology
