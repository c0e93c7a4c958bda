#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/QR>
#include <algorithm>
#include <random>

#include "secura/metrics.hpp"
#include "support.hpp"

using namespace secura;
using testing::random_matrix;

namespace {

Matrix random_orthogonal(Index n, std::uint64_t seed) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, n, seed));
  return qr.householderQ();
}

double eigen_nuclear(const Matrix& w) {
  Eigen::JacobiSVD<Eigen::MatrixXd> ref(w);
  return ref.singularValues().sum();
}

}  // namespace

TEST_SUITE("drift") {
  TEST_CASE("identical matrices do not drift") {
    const Matrix w = random_matrix(5, 4, 1);
    CHECK(svd_norm_drift(w, w).drift == 0.0);
  }

  TEST_CASE("diagonal scaling") {
    const Matrix i2 = Matrix::Identity(2, 2);
    const auto rec = svd_norm_drift(i2, 2.0 * i2);
    CHECK(rec.nuclear_before == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(rec.nuclear_after == doctest::Approx(4.0).epsilon(1e-15));
    CHECK(rec.drift == doctest::Approx(2.0).epsilon(1e-14));
  }

  TEST_CASE("random perturbation against an independent SVD") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Matrix w = random_matrix(7, 5, seed);
      const Matrix w2 = w + random_matrix(7, 5, 50 + seed, 0.1);
      const auto rec = svd_norm_drift(w, w2);
      CHECK(rec.nuclear_before == doctest::Approx(eigen_nuclear(w)).epsilon(1e-12));
      CHECK(rec.nuclear_after == doctest::Approx(eigen_nuclear(w2)).epsilon(1e-12));
      CHECK(rec.drift == doctest::Approx(eigen_nuclear(w2) - eigen_nuclear(w)).epsilon(1e-9));
      CHECK(rec.nuclear_before >= 0.0);
    }
  }

  TEST_CASE("spectral variant") {
    Matrix w = Matrix::Zero(3, 3);
    w.diagonal() << 1, 5, 2;
    CHECK(svd_norm(w, DriftNorm::Spectral) == doctest::Approx(5.0));
    CHECK(svd_norm(w, DriftNorm::Nuclear) == doctest::Approx(8.0));
  }

  TEST_CASE("invariant under orthogonal transforms") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Matrix a = random_matrix(6, 6, seed);
      const Matrix b = a + random_matrix(6, 6, 100 + seed, 0.2);
      const Matrix q1 = random_orthogonal(6, 200 + seed);
      const Matrix q2 = random_orthogonal(6, 300 + seed);
      const double plain = svd_norm_drift(a, b).drift;
      const double rotated = svd_norm_drift(q1 * a * q2, q1 * b * q2).drift;
      CHECK(std::abs(plain - rotated) <= 1e-8);
    }
  }

  TEST_CASE("shape mismatch") {
    CHECK_THROWS_AS(svd_norm_drift(Matrix::Zero(2, 2), Matrix::Zero(2, 3)), ShapeError);
  }
}

TEST_SUITE("gradient stats") {
  TEST_CASE("constant series") {
    const std::vector<double> s{3, 3, 3};
    const auto st = gradient_stats(s);
    CHECK(st.range == 0.0);
    CHECK(st.variance == 0.0);
  }

  TEST_CASE("two points") {
    const std::vector<double> s{0, 2};
    const auto st = gradient_stats(s);
    CHECK(st.range == 2.0);
    CHECK(st.variance == 1.0);
  }

  TEST_CASE("two-pass oracle and permutation invariance") {
    std::mt19937_64 rng(3);
    std::lognormal_distribution<double> dist(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<double> s(500);
      for (double& x : s) x = dist(rng);
      double mean = 0.0;
      for (double x : s) mean += x;
      mean /= static_cast<double>(s.size());
      double var = 0.0;
      for (double x : s) var += (x - mean) * (x - mean);
      var /= static_cast<double>(s.size());
      const auto st = gradient_stats(s);
      CHECK(st.variance == doctest::Approx(var).epsilon(1e-12));
      CHECK(st.range == *std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()));
      CHECK(st.series == s);

      std::shuffle(s.begin(), s.end(), rng);
      const auto shuffled = gradient_stats(s);
      CHECK(shuffled.range == st.range);
      CHECK(shuffled.variance == doctest::Approx(st.variance).epsilon(1e-12));
    }
  }

  TEST_CASE("empty series is a contract error") {
    CHECK_THROWS_AS(gradient_stats(std::vector<double>{}), ContractError);
  }
}

TEST_SUITE("retention") {
  TEST_CASE("unchanged probe") {
    const auto rec = retention_score("X", {0.7, 0.7, 0.7}, 0.7, true);
    REQUIRE(rec.retention_ratio.has_value());
    CHECK(*rec.retention_ratio == 1.0);
    CHECK(rec.probe_metric_after_each_task.size() == 3);
  }

  TEST_CASE("accuracy halves") {
    const auto rec = retention_score("X", {0.8, 0.4}, 0.8, true);
    CHECK(*rec.retention_ratio == doctest::Approx(0.5));
  }

  TEST_CASE("mse is inverted") {
    const auto rec = retention_score("X", {0.1, 0.4}, 0.1, false);
    CHECK(*rec.retention_ratio == doctest::Approx(0.25));
  }

  TEST_CASE("multi-task log replay") {
    // accuracy log of a four-task run whose probe is trained first
    const std::vector<double> log{0.92, 0.81, 0.66, 0.71};
    const auto rec = retention_score("X", log, log[0], true);
    CHECK(*rec.retention_ratio == doctest::Approx(0.71 / 0.92).epsilon(1e-15));
    const std::vector<double> mse{0.05, 0.2, 0.35, 0.5};
    CHECK(*retention_score("X", mse, mse[0], false).retention_ratio ==
          doctest::Approx(0.05 / 0.5).epsilon(1e-15));
  }

  TEST_CASE("zero reference is undefined, not clamped") {
    const auto rec = retention_score("X", {0.0, 0.3}, 0.0, true);
    CHECK_FALSE(rec.retention_ratio.has_value());
    const auto mse = retention_score("X", {0.0, 0.0}, 0.2, false);
    CHECK_FALSE(mse.retention_ratio.has_value());
    CHECK(retention_score("X", {-1.0}, 0.5, true).retention_ratio == 0.0);
  }
}
