#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "dsq/problems.hpp"
#include "dsq/rng.hpp"

using namespace dsq;
using namespace dsq::problems;

namespace {

// Central finite differences, the independent oracle for analytic gradients.
VectorX<double> fd_gradient(const ProblemSpec& spec, Index node,
                            const VectorX<double>& x, double h = 1e-5) {
  VectorX<double> g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    VectorX<double> xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (local_value(spec, node, xp) - local_value(spec, node, xm)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_SUITE("problems") {

TEST_CASE("libsvm parsing") {
  std::istringstream ok("1 1:0.5 3:-2\n-1\n");
  const auto ds = parse_libsvm(ok);
  REQUIRE(ds.rows.size() == 2);
  CHECK(ds.dim == 3);
  CHECK(ds.labels[0] == 1.0);
  CHECK(ds.labels[1] == -1.0);
  const auto row0 = ds.dense_row(0);
  CHECK(row0[0] == 0.5);
  CHECK(row0[1] == 0.0);
  CHECK(row0[2] == -2.0);
  CHECK(ds.dense_row(1).norm() == 0.0);

  std::istringstream zero_index("1 0:1\n");
  CHECK_THROWS_AS(parse_libsvm(zero_index), ParseError);

  std::istringstream garbage("1 1:0.5\n-1 2:oops\n");
  try {
    parse_libsvm(garbage);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }

  std::istringstream empty("");
  CHECK_THROWS_AS(parse_libsvm(empty), ParseError);

  CHECK_THROWS(load_libsvm("/nonexistent/path.libsvm"));
}

TEST_CASE("partition strategies") {
  Dataset ds;
  ds.dim = 1;
  for (int i = 0; i < 4; ++i) {
    SparseRow r;
    r.entries.emplace_back(0, static_cast<double>(i));
    ds.rows.push_back(r);
    ds.labels.push_back(i < 2 ? -1.0 : 1.0);
  }

  const auto parts = partition(ds, 2, PartitionStrategy::Shuffled, 3);
  REQUIRE(parts.size() == 2);
  CHECK(parts[0].size() == 2);
  CHECK(parts[1].size() == 2);
  std::vector<bool> seen(4, false);
  for (const auto& p : parts)
    for (Index idx : p) seen[static_cast<std::size_t>(idx)] = true;
  for (bool s : seen) CHECK(s);

  // label-sorted on a balanced two-class set puts one class per node
  const auto sorted = partition(ds, 2, PartitionStrategy::LabelSorted, 3);
  for (Index idx : sorted[0]) CHECK(ds.labels[static_cast<std::size_t>(idx)] == -1.0);
  for (Index idx : sorted[1]) CHECK(ds.labels[static_cast<std::size_t>(idx)] == 1.0);

  // sizes differ by at most one for uneven splits
  const auto uneven = partition(ds, 3, PartitionStrategy::Shuffled, 3);
  CHECK(uneven[0].size() == 2);
  CHECK(uneven[1].size() == 1);
  CHECK(uneven[2].size() == 1);

  CHECK_THROWS_AS(partition(ds, 5, PartitionStrategy::Shuffled, 3),
                  std::invalid_argument);
}

TEST_CASE("identical data on every node has zero outer variance") {
  Dataset ds;
  ds.dim = 2;
  for (int i = 0; i < 4; ++i) {
    SparseRow r;
    r.entries.emplace_back(0, 1.0);
    r.entries.emplace_back(1, -2.0);
    ds.rows.push_back(r);
    ds.labels.push_back(3.0);
  }
  const auto spec = from_dataset(ds, Kind::Quadratic, 4, PartitionStrategy::Shuffled, 1);
  RandomStream rng(1);
  const auto consts = constants(spec, 3, rng);
  CHECK(consts.zeta2_hat <= 1e-10);
}

TEST_CASE("scalar quadratic sanity") {
  // f(x) = (x-1)^2 / 2: L = 1, x* = 1, f* = 0.
  Dataset ds;
  ds.dim = 1;
  SparseRow r;
  r.entries.emplace_back(0, 1.0);
  ds.rows.push_back(r);
  ds.labels.push_back(1.0);
  const auto spec = from_dataset(ds, Kind::Quadratic, 1, PartitionStrategy::Shuffled, 1);
  RandomStream rng(1);
  const auto consts = constants(spec, 2, rng);
  CHECK(consts.L == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(consts.x_star.has_value());
  CHECK((*consts.x_star)[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*consts.f_star == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("synthetic quadratic heterogeneity") {
  SUBCASE("h = 0 makes all local gradients vanish at the optimum") {
    const auto spec = synth_quadratic(4, 6, 12, 0.0, 11);
    RandomStream rng(2);
    const auto consts = constants(spec, 2, rng);
    REQUIRE(consts.x_star.has_value());
    CHECK(outer_variance_at(spec, *consts.x_star) <= 1e-10);
    for (Index i = 0; i < 4; ++i)
      CHECK(local_gradient(spec, i, *consts.x_star).norm() <= 1e-7);
  }
  SUBCASE("single node reduces to least squares solved by normal equations") {
    const auto spec = synth_quadratic(1, 5, 20, 0.7, 13);
    RandomStream rng(2);
    const auto consts = constants(spec, 2, rng);
    REQUIRE(consts.x_star.has_value());
    const auto& A = spec.features[0];
    const auto& b = spec.targets[0];
    const VectorX<double> direct =
        (A.transpose() * A).ldlt().solve(A.transpose() * b);
    CHECK((*consts.x_star - direct).norm() <= 1e-8);
  }
  SUBCASE("h > 0 produces nonzero heterogeneity") {
    const auto spec = synth_quadratic(4, 6, 12, 0.5, 11);
    RandomStream rng(2);
    const auto consts = constants(spec, 2, rng);
    CHECK(consts.zeta2_hat > 1e-4);
  }
}

TEST_CASE("gradients match central finite differences") {
  RandomStream rng(77);
  const auto quad = synth_quadratic(3, 5, 9, 0.4, 5);
  const auto logi = synth_two_class(3, 5, 9, 0.8, 6, PartitionStrategy::Shuffled, 0.05);
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = rng.normal_vector<double>(5);
    for (Index node = 0; node < 3; ++node) {
      const auto ga = local_gradient(quad, node, x);
      const auto gf = fd_gradient(quad, node, x);
      CHECK((ga - gf).norm() <= 1e-6 * std::max(1.0, ga.norm()));
      const auto la = local_gradient(logi, node, x);
      const auto lf = fd_gradient(logi, node, x);
      CHECK((la - lf).norm() <= 1e-6 * std::max(1.0, la.norm()));
    }
  }
}

TEST_CASE("smoothness bound holds with the exact quadratic L") {
  const auto spec = synth_quadratic(3, 6, 10, 0.3, 21);
  RandomStream rng(3);
  const auto consts = constants(spec, 2, rng);
  for (int rep = 0; rep < 30; ++rep) {
    const auto x = rng.normal_vector<double>(6);
    const auto y = rng.normal_vector<double>(6);
    for (Index i = 0; i < 3; ++i) {
      const double lhs = (local_gradient(spec, i, x) - local_gradient(spec, i, y)).norm();
      CHECK(lhs <= consts.L * (x - y).norm() * (1.0 + 1e-10) + 1e-12);
    }
  }
}

TEST_CASE("stochastic gradients") {
  const auto spec = synth_quadratic(2, 4, 8, 0.2, 31);
  const VectorX<double> x = RandomStream(9).normal_vector<double>(4);

  SUBCASE("full batch equals the exact gradient") {
    RandomStream rng(1);
    const auto g = grad_stochastic(spec, 0, x, 8, rng);
    CHECK((g - local_gradient(spec, 0, x)).norm() == 0.0);
    CHECK((g - spec.features[0].transpose() * (spec.features[0] * x - spec.targets[0]) / 8.0)
              .norm() <= 1e-14);
  }
  SUBCASE("batch range is enforced") {
    RandomStream rng(1);
    CHECK_THROWS_AS(grad_stochastic(spec, 0, x, 0, rng), std::invalid_argument);
    CHECK_THROWS_AS(grad_stochastic(spec, 0, x, 9, rng), std::invalid_argument);
  }
  SUBCASE("batch mean is unbiased: Monte Carlo against the exact gradient") {
    RandomStream rng(123);
    const auto exact = local_gradient(spec, 0, x);
    const int draws = 10000;
    VectorX<double> mean = VectorX<double>::Zero(4);
    double second = 0;
    for (int s = 0; s < draws; ++s) {
      const auto g = grad_stochastic(spec, 0, x, 2, rng);
      mean += g;
      second += (g - exact).squaredNorm();
    }
    mean /= draws;
    const double se = std::sqrt(second / draws / draws);  // crude vector-level scale
    CHECK((mean - exact).norm() <= 3.0 * se + 1e-9);
  }
  SUBCASE("determinism: same seed, same batches") {
    RandomStream a(55), b(55);
    const auto ga = grad_stochastic(spec, 1, x, 3, a);
    const auto gb = grad_stochastic(spec, 1, x, 3, b);
    CHECK((ga - gb).norm() == 0.0);
  }
}

TEST_CASE("injected noise is measured by the inner-variance estimate") {
  // one sample per node, so the only stochasticity is the injected noise:
  // sigma2_hat estimates d * noise_sigma^2 = 10 * 0.01.
  auto spec = synth_quadratic(2, 10, 1, 0.0, 41, 0.1);
  RandomStream rng(8);
  const auto consts = constants(spec, 1, rng, 1000);
  CHECK(consts.sigma2_hat >= 0.5 * 0.1);
  CHECK(consts.sigma2_hat <= 2.0 * 0.1);
}

TEST_CASE("synthetic data is reproducible from its seed") {
  const auto a = synth_quadratic(3, 4, 6, 0.5, 99);
  const auto b = synth_quadratic(3, 4, 6, 0.5, 99);
  for (Index i = 0; i < 3; ++i) {
    CHECK((a.features[static_cast<std::size_t>(i)] -
           b.features[static_cast<std::size_t>(i)]).norm() == 0.0);
    CHECK((a.targets[static_cast<std::size_t>(i)] -
           b.targets[static_cast<std::size_t>(i)]).norm() == 0.0);
  }
  const auto c = synth_two_class(2, 3, 5, 1.0, 7);
  const auto d = synth_two_class(2, 3, 5, 1.0, 7);
  CHECK((c.features[0] - d.features[0]).norm() == 0.0);
  CHECK((c.targets[1] - d.targets[1]).norm() == 0.0);
}

}  // TEST_SUITE
