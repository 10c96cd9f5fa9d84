#include <doctest.h>

#include <cmath>

#include "dsq/rng.hpp"
#include "dsq/topology.hpp"

using namespace dsq;
using namespace dsq::topology;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent oracle for ring spectra: eigenvalues of the uniform-weight ring
// are the circulant values (1 + 2 cos(2 pi k / n)) / 3, k = 0..n-1.
std::vector<double> ring_circulant_eigenvalues(Index n) {
  std::vector<double> ev;
  for (Index k = 0; k < n; ++k)
    ev.push_back((1.0 + 2.0 * std::cos(2.0 * kPi * static_cast<double>(k) /
                                       static_cast<double>(n))) / 3.0);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

}  // namespace

TEST_SUITE("topology") {

TEST_CASE("ring construction") {
  CHECK_THROWS_AS(build_ring(1), TopologyError);

  const auto W2 = build_ring(2);
  CHECK(W2.entries(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(W2.entries(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  const auto W3 = build_ring(3);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 3; ++j)
      CHECK(W3.entries(i, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const auto W4 = build_ring(4);
  CHECK(W4.entries(0, 0) == doctest::Approx(1.0 / 3.0));
  CHECK(W4.entries(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(W4.entries(0, 2) == 0.0);
  CHECK(W4.entries(0, 3) == doctest::Approx(1.0 / 3.0));

  for (Index n : {2, 3, 4, 5, 8, 16}) CHECK(check(build_ring(n)).empty());
}

TEST_CASE("ring spectrum matches the circulant formula") {
  for (Index n : {4, 5, 8, 12}) {
    const auto info = spectral(build_ring(n));
    const auto expected = ring_circulant_eigenvalues(n);
    for (Index i = 0; i < n; ++i)
      CHECK(info.eigenvalues[i] ==
            doctest::Approx(expected[static_cast<std::size_t>(i)]).epsilon(1e-10));
  }
  const auto info8 = spectral(build_ring(8));
  CHECK(info8.lambda2 == doctest::Approx((1.0 + std::sqrt(2.0)) / 3.0).epsilon(1e-10));
  CHECK(info8.lambda_n == doctest::Approx(-1.0 / 3.0).epsilon(1e-10));

  const auto info4 = spectral(build_ring(4));
  CHECK(info4.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(info4.eigenvalues[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-10));
  CHECK(info4.eigenvalues[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-10));
  CHECK(info4.eigenvalues[3] == doctest::Approx(-1.0 / 3.0).epsilon(1e-10));
}

TEST_CASE("complete graph") {
  const auto W1 = build_complete(1);
  CHECK(W1.entries(0, 0) == 1.0);
  CHECK(check(W1).empty());

  const auto W4 = build_complete(4);
  const auto info = spectral(W4);
  CHECK(info.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-12));
  for (Index i = 1; i < 4; ++i)
    CHECK(info.eigenvalues[i] == doctest::Approx(0.0).epsilon(1e-12));

  const auto info2 = spectral(build_complete(2));
  CHECK(info2.lambda2 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(info2.gap == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("metropolis weights from edge lists") {
  const auto pair = build_from_edges(2, {{0, 1}});
  CHECK(pair.entries(0, 0) == doctest::Approx(0.5));
  CHECK(pair.entries(0, 1) == doctest::Approx(0.5));

  // Path 0-1-2: end degrees 1, middle degree 2.
  const auto path = build_from_edges(3, {{0, 1}, {1, 2}});
  CHECK(path.entries(0, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(path.entries(1, 2) == doctest::Approx(1.0 / 3.0));
  CHECK(path.entries(0, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(path.entries(1, 1) == doctest::Approx(1.0 / 3.0));
  CHECK(path.entries(2, 2) == doctest::Approx(2.0 / 3.0));
  CHECK(check(path).empty());

  // Star with center 0: center self-weight 1/4, leaf links 1/4.
  const auto star = build_from_edges(4, {{0, 1}, {0, 2}, {0, 3}});
  for (Index leaf = 1; leaf < 4; ++leaf)
    CHECK(star.entries(0, leaf) == doctest::Approx(0.25));
  CHECK(star.entries(0, 0) == doctest::Approx(0.25));
  CHECK(check(star).empty());

  CHECK_THROWS_AS(build_from_edges(3, {{0, 0}}), TopologyError);
  CHECK_THROWS_AS(build_from_edges(4, {{0, 1}, {2, 3}}), TopologyError);  // disconnected
  CHECK_THROWS_AS(build_from_edges(3, {{0, 5}}), TopologyError);          // out of range

  // duplicate and reversed edges collapse to one undirected edge
  const auto dup = build_from_edges(2, {{0, 1}, {1, 0}, {0, 1}});
  CHECK(dup.entries(0, 1) == doctest::Approx(0.5));
  CHECK(check(dup).empty());
}

TEST_CASE("validate names each violation") {
  MixingMatrix identity{2, MatrixX<double>::Identity(2, 2)};
  auto issues = check(identity);
  REQUIRE(issues.size() == 1);
  CHECK(issues[0].kind == Violation::Disconnected);

  MixingMatrix ok{2, MatrixX<double>(2, 2)};
  ok.entries << 0.6, 0.4, 0.4, 0.6;
  CHECK(check(ok).empty());
  CHECK_NOTHROW(validate(ok));

  MixingMatrix bad_sum{2, MatrixX<double>(2, 2)};
  bad_sum.entries << 0.7, 0.4, 0.4, 0.6;
  issues = check(bad_sum);
  REQUIRE(!issues.empty());
  CHECK(issues[0].kind == Violation::RowSum);

  MixingMatrix asym{2, MatrixX<double>(2, 2)};
  asym.entries << 0.5, 0.5, 0.4, 0.6;
  issues = check(asym);
  REQUIRE(!issues.empty());
  CHECK(issues[0].kind == Violation::Asymmetric);

  MixingMatrix negative{2, MatrixX<double>(2, 2)};
  negative.entries << 1.2, -0.2, -0.2, 1.2;
  issues = check(negative);
  bool found = false;
  for (const auto& it : issues) found |= it.kind == Violation::NegativeEntry;
  CHECK(found);
}

TEST_CASE("effective form and its affine eigenvalue map") {
  const auto W = build_ring(4);

  const auto at0 = effective(W, 0.0);
  CHECK(at0.entries.isApprox(MatrixX<double>::Identity(4, 4), 1e-15));
  const auto at1 = effective(W, 1.0);
  CHECK(at1.entries.isApprox(W.entries, 1e-15));
  CHECK_THROWS_AS(effective(W, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(effective(W, -0.1), std::invalid_argument);

  const auto half = spectral(effective(W, 0.5));
  CHECK(half.lambda_n == doctest::Approx(1.0 / 3.0).epsilon(1e-10));

  // lambda_i(W_eff) = 1 - eta + eta lambda_i(W), compared as sorted lists.
  for (double eta : {0.1, 0.3, 0.5, 0.9}) {
    const auto base = spectral(W);
    const auto eff = spectral(effective(W, eta));
    for (Index i = 0; i < 4; ++i)
      CHECK(eff.eigenvalues[i] ==
            doctest::Approx(1.0 - eta + eta * base.eigenvalues[i]).epsilon(1e-10));
  }
}

TEST_CASE("every constructed matrix validates with unit top eigenvalue") {
  std::vector<MixingMatrix> all;
  for (Index n : {2, 3, 5, 8}) all.push_back(build_ring(n));
  for (Index n : {1, 2, 6}) all.push_back(build_complete(n));
  all.push_back(build_from_edges(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 0}, {0, 2}}));
  for (const auto& W : all) {
    CHECK_NOTHROW(validate(W));
    const auto info = spectral(W);
    CHECK(std::abs(info.eigenvalues[0] - 1.0) <= 1e-10);
    CHECK(info.lambda_n >= -1.0 - 1e-10);
    CHECK(info.lambda_n <= info.lambda2 + 1e-10);
    CHECK(info.lambda2 <= 1.0 + 1e-10);
  }
}

TEST_CASE("eta <= 1/2 keeps W_eff positive semidefinite") {
  for (Index n : {3, 5, 8}) {
    const auto W = build_ring(n);
    for (double eta : {0.1, 0.25, 0.5}) {
      const auto info = spectral(effective(W, eta));
      CHECK(info.lambda_n >= -1e-10);
    }
  }
}

TEST_CASE("gossip contraction on the disagreement subspace") {
  RandomStream rng(2024);
  for (Index n : {4, 8}) {
    const auto W_eff = effective(build_ring(n), 0.5);
    const auto info = spectral(W_eff);
    const double lambda_bar = std::max(std::abs(info.lambda2), std::abs(info.lambda_n));
    const MatrixX<double> A = MatrixX<double>::Constant(n, n, 1.0 / static_cast<double>(n));
    const MatrixX<double> P = MatrixX<double>::Identity(n, n) - A;
    for (int rep = 0; rep < 5; ++rep) {
      MatrixX<double> X(6, n);
      for (Index r = 0; r < 6; ++r)
        for (Index c = 0; c < n; ++c) X(r, c) = rng.normal();
      const double before = (X * P).norm();
      const double after = (X * W_eff.entries * P).norm();
      CHECK(after <= lambda_bar * before + 1e-10);
    }
  }
}

TEST_CASE("templated scalar instantiation") {
  const auto W = build_ring<float>(5);
  for (Index i = 0; i < 5; ++i)
    CHECK(std::abs(W.entries.row(i).sum() - 1.0f) < 1e-6f);
  const auto info = spectral(W);
  CHECK(std::abs(info.eigenvalues[0] - 1.0f) < 1e-5f);
}

}  // TEST_SUITE
