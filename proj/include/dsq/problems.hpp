#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsq/rng.hpp"
#include "dsq/types.hpp"

namespace dsq::problems {

// Local objectives f_i with stochastic gradients and measurement of the
// constants they obey: smoothness L, inner variance sigma^2 (single-sample
// gradient noise), outer variance zeta^2 (data heterogeneity).

enum class Kind { Quadratic, Logistic };

inline const char* kind_name(Kind k) {
  return k == Kind::Quadratic ? "quadratic" : "logistic";
}

template <typename Scalar = double>
struct ProblemSpecT {
  Kind kind = Kind::Quadratic;
  Index n_nodes = 0;
  Index dim = 0;
  std::vector<MatrixX<Scalar>> features;  // A_i, m_i x d
  std::vector<VectorX<Scalar>> targets;   // b_i (quadratic) or labels in {-1,+1}
  Scalar l2_reg = 0;                      // logistic only
  Scalar noise_sigma = 0;                 // additive N(0, sigma^2 I) gradient noise

  Index samples(Index node) const { return features[static_cast<std::size_t>(node)].rows(); }
};
using ProblemSpec = ProblemSpecT<double>;

template <typename Scalar = double>
struct ProblemConstantsT {
  Scalar L = 0;
  Scalar sigma2_hat = 0;
  Scalar zeta2_hat = 0;
  std::optional<VectorX<Scalar>> x_star{};
  std::optional<Scalar> f_star{};
};
using ProblemConstants = ProblemConstantsT<double>;

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, long line)
      : std::runtime_error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

struct SparseRow {
  std::vector<std::pair<Index, double>> entries;  // 0-based after parsing
};

struct Dataset {
  std::vector<SparseRow> rows;
  std::vector<double> labels;
  Index dim = 0;

  VectorX<double> dense_row(std::size_t r) const {
    VectorX<double> v = VectorX<double>::Zero(dim);
    for (auto [idx, val] : rows[r].entries) v[idx] = val;
    return v;
  }
};

// LIBSVM text format: "label idx:val idx:val ..." with 1-based indices.
// Dimension is the maximum index seen.
inline Dataset parse_libsvm(std::istream& in) {
  Dataset ds;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string token;
    if (!(ls >> token)) continue;  // blank line
    SparseRow row;
    double label;
    try {
      std::size_t used = 0;
      label = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
    } catch (const std::exception&) {
      throw ParseError("malformed label '" + token + "'", lineno);
    }
    while (ls >> token) {
      const auto colon = token.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == token.size())
        throw ParseError("malformed feature token '" + token + "'", lineno);
      long idx;
      double val;
      try {
        std::size_t used = 0;
        idx = std::stol(token.substr(0, colon), &used);
        if (used != colon) throw std::invalid_argument(token);
        used = 0;
        const std::string vs = token.substr(colon + 1);
        val = std::stod(vs, &used);
        if (used != vs.size()) throw std::invalid_argument(token);
      } catch (const std::exception&) {
        throw ParseError("malformed feature token '" + token + "'", lineno);
      }
      if (idx < 1) throw ParseError("feature index must be 1-based, got " +
                                    std::to_string(idx), lineno);
      row.entries.emplace_back(static_cast<Index>(idx - 1), val);
      ds.dim = std::max(ds.dim, static_cast<Index>(idx));
    }
    ds.rows.push_back(std::move(row));
    ds.labels.push_back(label);
  }
  if (ds.rows.empty()) throw ParseError("empty dataset", lineno);
  return ds;
}

inline Dataset load_libsvm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_libsvm: cannot open '" + path + "'");
  return parse_libsvm(in);
}

enum class PartitionStrategy { Shuffled, LabelSorted };

// Balanced split into n_nodes index lists (sizes differ by at most one).
// Shuffled draws a uniform permutation (low heterogeneity); LabelSorted
// splits the label-sorted order contiguously (high heterogeneity).
inline std::vector<std::vector<Index>> partition(const Dataset& ds, Index n_nodes,
                                                 PartitionStrategy strategy,
                                                 std::uint64_t seed) {
  const Index rows = static_cast<Index>(ds.rows.size());
  if (n_nodes < 1 || n_nodes > rows)
    throw std::invalid_argument("partition: need 1 <= n_nodes <= rows");
  std::vector<Index> order(static_cast<std::size_t>(rows));
  std::iota(order.begin(), order.end(), Index{0});
  if (strategy == PartitionStrategy::Shuffled) {
    RandomStream rng = substream(seed, StreamKind::Partition);
    for (Index i = rows - 1; i > 0; --i) {
      const Index j = rng.uniform_index(i + 1);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
  } else {
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return ds.labels[static_cast<std::size_t>(a)] < ds.labels[static_cast<std::size_t>(b)];
    });
  }
  std::vector<std::vector<Index>> parts(static_cast<std::size_t>(n_nodes));
  const Index base = rows / n_nodes;
  const Index extra = rows % n_nodes;
  Index pos = 0;
  for (Index node = 0; node < n_nodes; ++node) {
    const Index size = base + (node < extra ? 1 : 0);
    auto& p = parts[static_cast<std::size_t>(node)];
    p.assign(order.begin() + pos, order.begin() + pos + size);
    pos += size;
  }
  return parts;
}

template <typename Scalar = double>
ProblemSpecT<Scalar> from_dataset(const Dataset& ds, Kind kind, Index n_nodes,
                                  PartitionStrategy strategy, std::uint64_t seed,
                                  Scalar l2_reg = 0, Scalar noise_sigma = 0) {
  const auto parts = partition(ds, n_nodes, strategy, seed);
  ProblemSpecT<Scalar> spec;
  spec.kind = kind;
  spec.n_nodes = n_nodes;
  spec.dim = ds.dim;
  spec.l2_reg = l2_reg;
  spec.noise_sigma = noise_sigma;
  for (const auto& part : parts) {
    MatrixX<Scalar> A = MatrixX<Scalar>::Zero(static_cast<Index>(part.size()), ds.dim);
    VectorX<Scalar> b(static_cast<Index>(part.size()));
    for (std::size_t r = 0; r < part.size(); ++r) {
      const auto& row = ds.rows[static_cast<std::size_t>(part[r])];
      for (auto [idx, val] : row.entries) A(static_cast<Index>(r), idx) = static_cast<Scalar>(val);
      const double label = ds.labels[static_cast<std::size_t>(part[r])];
      if (kind == Kind::Logistic && label != 1.0 && label != -1.0)
        throw std::invalid_argument("from_dataset: logistic labels must be +/-1");
      b[static_cast<Index>(r)] = static_cast<Scalar>(label);
    }
    spec.features.push_back(std::move(A));
    spec.targets.push_back(std::move(b));
  }
  return spec;
}

// Least-squares instance with controllable heterogeneity: node-local optima
// x_i* = x0* + h u_i (unit-norm random u_i), b_i = A_i x_i*.  h = 0 makes all
// local gradients vanish at x0*.
template <typename Scalar = double>
ProblemSpecT<Scalar> synth_quadratic(Index n_nodes, Index d, Index m_per_node,
                                     Scalar heterogeneity, std::uint64_t seed,
                                     Scalar noise_sigma = 0) {
  if (n_nodes < 1 || d < 1 || m_per_node < 1)
    throw std::invalid_argument("synth_quadratic: parameters must be positive");
  if (heterogeneity < Scalar(0))
    throw std::invalid_argument("synth_quadratic: heterogeneity must be >= 0");
  RandomStream rng = substream(seed, StreamKind::Problem);
  ProblemSpecT<Scalar> spec;
  spec.kind = Kind::Quadratic;
  spec.n_nodes = n_nodes;
  spec.dim = d;
  spec.noise_sigma = noise_sigma;
  const VectorX<Scalar> x0 = rng.normal_vector<Scalar>(d);
  for (Index node = 0; node < n_nodes; ++node) {
    VectorX<Scalar> u = rng.normal_vector<Scalar>(d);
    u.normalize();
    MatrixX<Scalar> A(m_per_node, d);
    for (Index r = 0; r < m_per_node; ++r)
      for (Index c = 0; c < d; ++c) A(r, c) = static_cast<Scalar>(rng.normal());
    const VectorX<Scalar> x_local = x0 + heterogeneity * u;
    spec.features.push_back(A);
    spec.targets.push_back(A * x_local);
  }
  return spec;
}

// Two-class logistic instance: rows z + margin * y * w with z ~ N(0, I),
// labels y uniform in {-1,+1}, pooled then partitioned by strategy.
template <typename Scalar = double>
ProblemSpecT<Scalar> synth_two_class(Index n_nodes, Index d, Index m_per_node,
                                     Scalar margin, std::uint64_t seed,
                                     PartitionStrategy strategy = PartitionStrategy::Shuffled,
                                     Scalar l2_reg = 0, Scalar noise_sigma = 0) {
  if (n_nodes < 1 || d < 1 || m_per_node < 1)
    throw std::invalid_argument("synth_two_class: parameters must be positive");
  RandomStream rng = substream(seed, StreamKind::Problem, 1);
  VectorX<double> w = rng.normal_vector<double>(d);
  w.normalize();
  Dataset ds;
  ds.dim = d;
  const Index total = n_nodes * m_per_node;
  for (Index r = 0; r < total; ++r) {
    const double y = rng.uniform() < 0.5 ? -1.0 : 1.0;
    SparseRow row;
    row.entries.reserve(static_cast<std::size_t>(d));
    for (Index c = 0; c < d; ++c)
      row.entries.emplace_back(c, rng.normal() + static_cast<double>(margin) * y * w[c]);
    ds.rows.push_back(std::move(row));
    ds.labels.push_back(y);
  }
  return from_dataset<Scalar>(ds, Kind::Logistic, n_nodes, strategy, seed, l2_reg,
                              noise_sigma);
}

namespace detail {

// log(1 + exp(z)) without overflow.
template <typename Scalar>
Scalar softplus(Scalar z) {
  const Scalar az = std::abs(z);
  return std::max(z, Scalar(0)) + std::log1p(std::exp(-az));
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

}  // namespace detail

template <typename Scalar>
Scalar local_value(const ProblemSpecT<Scalar>& spec, Index node, const VectorX<Scalar>& x) {
  const auto& A = spec.features[static_cast<std::size_t>(node)];
  const auto& b = spec.targets[static_cast<std::size_t>(node)];
  const Scalar m = static_cast<Scalar>(A.rows());
  if (spec.kind == Kind::Quadratic) {
    return (A * x - b).squaredNorm() / (Scalar(2) * m);
  }
  const VectorX<Scalar> margins = (A * x).cwiseProduct(b);
  Scalar loss = 0;
  for (Index r = 0; r < margins.size(); ++r) loss += detail::softplus(-margins[r]);
  return loss / m + spec.l2_reg / Scalar(2) * x.squaredNorm();
}

template <typename Scalar>
VectorX<Scalar> local_gradient(const ProblemSpecT<Scalar>& spec, Index node,
                               const VectorX<Scalar>& x) {
  const auto& A = spec.features[static_cast<std::size_t>(node)];
  const auto& b = spec.targets[static_cast<std::size_t>(node)];
  const Scalar m = static_cast<Scalar>(A.rows());
  if (spec.kind == Kind::Quadratic) {
    return A.transpose() * (A * x - b) / m;
  }
  const VectorX<Scalar> z = A * x;
  VectorX<Scalar> coeff(z.size());
  for (Index r = 0; r < z.size(); ++r)
    coeff[r] = -b[r] * detail::sigmoid(-b[r] * z[r]);
  return A.transpose() * coeff / m + spec.l2_reg * x;
}

template <typename Scalar>
Scalar global_value(const ProblemSpecT<Scalar>& spec, const VectorX<Scalar>& x) {
  Scalar v = 0;
  for (Index i = 0; i < spec.n_nodes; ++i) v += local_value(spec, i, x);
  return v / static_cast<Scalar>(spec.n_nodes);
}

template <typename Scalar>
VectorX<Scalar> global_gradient(const ProblemSpecT<Scalar>& spec, const VectorX<Scalar>& x) {
  VectorX<Scalar> g = VectorX<Scalar>::Zero(spec.dim);
  for (Index i = 0; i < spec.n_nodes; ++i) g += local_gradient(spec, i, x);
  return g / static_cast<Scalar>(spec.n_nodes);
}

// Mean gradient over a uniform batch drawn without replacement, plus optional
// N(0, noise_sigma^2 I).  batch_size == m_i with no noise returns the exact
// local gradient.
template <typename Scalar>
VectorX<Scalar> grad_stochastic(const ProblemSpecT<Scalar>& spec, Index node,
                                const VectorX<Scalar>& x, Index batch_size,
                                RandomStream& rng) {
  const auto& A = spec.features[static_cast<std::size_t>(node)];
  const auto& b = spec.targets[static_cast<std::size_t>(node)];
  const Index m = A.rows();
  if (batch_size < 1 || batch_size > m)
    throw std::invalid_argument("grad_stochastic: batch_size out of range");
  VectorX<Scalar> g;
  if (batch_size == m) {
    g = local_gradient(spec, node, x);
  } else {
    std::vector<Index> pool(static_cast<std::size_t>(m));
    std::iota(pool.begin(), pool.end(), Index{0});
    for (Index i = 0; i < batch_size; ++i) {
      const Index j = i + rng.uniform_index(m - i);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
    }
    g = VectorX<Scalar>::Zero(spec.dim);
    for (Index i = 0; i < batch_size; ++i) {
      const Index r = pool[static_cast<std::size_t>(i)];
      if (spec.kind == Kind::Quadratic) {
        g += A.row(r).transpose() * (A.row(r).dot(x) - b[r]);
      } else {
        const Scalar z = A.row(r).dot(x);
        g += -b[r] * detail::sigmoid(-b[r] * z) * A.row(r).transpose();
      }
    }
    g /= static_cast<Scalar>(batch_size);
    if (spec.kind == Kind::Logistic) g += spec.l2_reg * x;
  }
  if (spec.noise_sigma > Scalar(0))
    g += spec.noise_sigma * rng.normal_vector<Scalar>(spec.dim);
  return g;
}

// (1/n) sum_i ||grad f_i(x) - grad f(x)||^2: the outer-variance measurement
// at a single point.
template <typename Scalar>
Scalar outer_variance_at(const ProblemSpecT<Scalar>& spec, const VectorX<Scalar>& x) {
  const VectorX<Scalar> g = global_gradient(spec, x);
  Scalar acc = 0;
  for (Index i = 0; i < spec.n_nodes; ++i)
    acc += (local_gradient(spec, i, x) - g).squaredNorm();
  return acc / static_cast<Scalar>(spec.n_nodes);
}

// Smoothness constant, empirical variances, and (quadratic) the exact optimum.
//   L       : quadratic max_i lambda_max(A_i^T A_i)/m_i; logistic the
//             standard bound max_i lambda_max(A_i^T A_i)/(4 m_i) + l2.
//   sigma2  : max over (probe, node) of the empirical single-sample gradient
//             variance, estimated with draws_per_probe draws.
//   zeta2   : max over probes of the exact outer variance.
// Probes: x* when known, the origin, and probe_points standard-normal draws.
template <typename Scalar>
ProblemConstantsT<Scalar> constants(const ProblemSpecT<Scalar>& spec, int probe_points,
                                    RandomStream& rng, int draws_per_probe = 256) {
  ProblemConstantsT<Scalar> out;
  for (Index i = 0; i < spec.n_nodes; ++i) {
    const auto& A = spec.features[static_cast<std::size_t>(i)];
    const MatrixX<Scalar> gram = A.transpose() * A;
    Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> solver(gram, Eigen::EigenvaluesOnly);
    const Scalar lmax = solver.eigenvalues().maxCoeff() / static_cast<Scalar>(A.rows());
    out.L = std::max(out.L, spec.kind == Kind::Quadratic ? lmax
                                                         : lmax / Scalar(4) + spec.l2_reg);
  }

  if (spec.kind == Kind::Quadratic) {
    MatrixX<Scalar> H = MatrixX<Scalar>::Zero(spec.dim, spec.dim);
    VectorX<Scalar> c = VectorX<Scalar>::Zero(spec.dim);
    for (Index i = 0; i < spec.n_nodes; ++i) {
      const auto& A = spec.features[static_cast<std::size_t>(i)];
      const auto& b = spec.targets[static_cast<std::size_t>(i)];
      const Scalar scale = Scalar(1) / (static_cast<Scalar>(spec.n_nodes) *
                                        static_cast<Scalar>(A.rows()));
      H += scale * (A.transpose() * A);
      c += scale * (A.transpose() * b);
    }
    const VectorX<Scalar> x_star = H.ldlt().solve(c);
    if (x_star.allFinite() &&
        static_cast<double>(global_gradient(spec, x_star).norm()) <= 1e-8) {
      out.x_star = x_star;
      out.f_star = global_value(spec, x_star);
    }
  }

  std::vector<VectorX<Scalar>> probes;
  if (out.x_star) probes.push_back(*out.x_star);
  probes.push_back(VectorX<Scalar>::Zero(spec.dim));
  for (int p = 0; p < probe_points; ++p) probes.push_back(rng.normal_vector<Scalar>(spec.dim));

  for (const auto& x : probes) {
    out.zeta2_hat = std::max(out.zeta2_hat, outer_variance_at(spec, x));
    for (Index i = 0; i < spec.n_nodes; ++i) {
      const Index m = spec.samples(i);
      if (m == 1 && spec.noise_sigma == Scalar(0)) continue;  // no sampling noise
      const VectorX<Scalar> exact = local_gradient(spec, i, x);
      Scalar acc = 0;
      for (int dct = 0; dct < draws_per_probe; ++dct)
        acc += (grad_stochastic(spec, i, x, Index(1), rng) - exact).squaredNorm();
      out.sigma2_hat = std::max(out.sigma2_hat, acc / Scalar(draws_per_probe));
    }
  }
  return out;
}

}  // namespace dsq::problems
