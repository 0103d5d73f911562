#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "myoloop/error.hpp"
#include "myoloop/kalman.hpp"

using namespace myo;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

KalmanParams scalar(double a, double w, double h, double q) {
  KalmanParams p;
  p.A = MatrixXd::Constant(1, 1, a);
  p.W = MatrixXd::Constant(1, 1, w);
  p.H = MatrixXd::Constant(1, 1, h);
  p.Q = MatrixXd::Constant(1, 1, q);
  return p;
}

KalmanState scalar_state(double x, double P) {
  return {VectorXd::Constant(1, x), MatrixXd::Constant(1, 1, P)};
}

double gauss(double x, double mean, double var) {
  return std::exp(-(x - mean) * (x - mean) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
}

// Slow 6-DOF trajectory plus white measurement noise.
struct NoisyDecodes {
  std::vector<std::array<double, 6>> truth, noisy;
};

NoisyDecodes noisy_decodes(std::size_t T, std::uint64_t seed, double noise) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  NoisyDecodes out;
  std::array<double, 6> phase{}, freq{};
  for (std::size_t d = 0; d < 6; ++d) {
    phase[d] = 6.0 * static_cast<double>(d) / 6.0;
    freq[d] = 0.15 + 0.05 * static_cast<double>(d);
  }
  for (std::size_t t = 0; t < T; ++t) {
    std::array<double, 6> x{}, z{};
    for (std::size_t d = 0; d < 6; ++d) {
      x[d] = 0.7 * std::sin(2 * std::numbers::pi * freq[d] * static_cast<double>(t) / 30.0 + phase[d]);
      z[d] = x[d] + noise * g(rng);
    }
    out.truth.push_back(x);
    out.noisy.push_back(z);
  }
  return out;
}

double msfd(const std::vector<std::array<double, 6>>& s) {
  double sum = 0;
  for (std::size_t t = 1; t < s.size(); ++t)
    for (std::size_t d = 0; d < 6; ++d) sum += (s[t][d] - s[t - 1][d]) * (s[t][d] - s[t - 1][d]);
  return sum / static_cast<double>((s.size() - 1) * 6);
}

double rmse(const std::vector<std::array<double, 6>>& a, const std::vector<std::array<double, 6>>& b) {
  double sum = 0;
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t d = 0; d < 6; ++d) sum += (a[t][d] - b[t][d]) * (a[t][d] - b[t][d]);
  return std::sqrt(sum / static_cast<double>(a.size() * 6));
}

KalmanParams fit_on(const NoisyDecodes& data) {
  std::vector<double> x, z;
  for (std::size_t t = 0; t < data.truth.size(); ++t) {
    x.insert(x.end(), data.truth[t].begin(), data.truth[t].end());
    z.insert(z.end(), data.noisy[t].begin(), data.noisy[t].end());
  }
  return fit_kalman(x, z, 6, 6);
}

}  // namespace

TEST_CASE("scalar step by hand") {
  const auto s = kalman_step(scalar(1, 1, 1, 2), scalar_state(0, 1), VectorXd::Constant(1, 4));
  // P- = 2, K = 2 / (2 + 2) = 0.5, x+ = 0 + 0.5 * 4, P+ = (1 - 0.5) * 2
  CHECK(std::abs(s.x(0) - 2.0) < 1e-12);
  CHECK(std::abs(s.P(0, 0) - 1.0) < 1e-12);
}

TEST_CASE("scalar limits") {
  const auto sharp = kalman_step(scalar(1, 1, 1, 1e-12), scalar_state(0.3, 1), VectorXd::Constant(1, 4));
  CHECK(sharp.x(0) == doctest::Approx(4.0).epsilon(1e-9));
  const auto vague = kalman_step(scalar(1, 1, 1, 1e12), scalar_state(0.3, 1), VectorXd::Constant(1, 4));
  CHECK(vague.x(0) == doctest::Approx(0.3).epsilon(1e-9));
}

TEST_CASE("agrees with a discretised Bayesian filter in 1-D") {
  const double a = 0.9, w = 0.5, h = 1.3, q = 0.8;
  const auto params = scalar(a, w, h, q);
  const std::vector<double> zs{0.7, -0.4, 1.9, 2.2, 0.1, -1.0};
  const int N = 10000;
  const double lo = -12, hi = 12, dx = (hi - lo) / (N - 1);
  std::vector<double> grid(N), dens(N), pred(N);
  for (int i = 0; i < N; ++i) grid[i] = lo + i * dx;
  KalmanState s = scalar_state(0.5, 1.2);
  for (int i = 0; i < N; ++i) dens[i] = gauss(grid[i], 0.5, 1.2);
  for (double z : zs) {
    s = kalman_step(params, s, VectorXd::Constant(1, z));
    for (int i = 0; i < N; ++i) {
      double acc = 0;
      for (int j = 0; j < N; ++j) acc += gauss(grid[i], a * grid[j], w) * dens[j];
      pred[i] = acc * dx;
    }
    double norm = 0;
    for (int i = 0; i < N; ++i) {
      dens[i] = pred[i] * gauss(z, h * grid[i], q);
      norm += dens[i] * dx;
    }
    double mean = 0, var = 0;
    for (int i = 0; i < N; ++i) {
      dens[i] /= norm;
      mean += grid[i] * dens[i] * dx;
    }
    for (int i = 0; i < N; ++i) var += (grid[i] - mean) * (grid[i] - mean) * dens[i] * dx;
    CHECK(std::abs(s.x(0) - mean) < 1e-3);
    CHECK(std::abs(s.P(0, 0) - var) < 1e-3);
  }
}

TEST_CASE("fit recovers a known transition") {
  MatrixXd A(2, 2);
  A << 0.95, 0.1, -0.1, 0.9;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 0.05);
  const std::size_t T = 20000;
  std::vector<double> x(T * 2), z(T * 3);
  VectorXd cur = VectorXd::Zero(2);
  for (std::size_t t = 0; t < T; ++t) {
    x[2 * t] = cur(0);
    x[2 * t + 1] = cur(1);
    z[3 * t] = cur(0) + 0.01 * g(rng);
    z[3 * t + 1] = cur(1) + 0.01 * g(rng);
    z[3 * t + 2] = cur(0) - cur(1);
    VectorXd next = A * cur;
    next(0) += g(rng);
    next(1) += g(rng);
    cur = next;
  }
  const auto p = fit_kalman(x, z, 2, 3);
  CHECK((p.A - A).cwiseAbs().maxCoeff() < 1e-2);
  CHECK(p.W(0, 0) == doctest::Approx(0.0025).epsilon(0.05));
  CHECK(p.H(2, 0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(p.H(2, 1) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("identity observations") {
  const auto d = noisy_decodes(500, 1, 0.0);
  const auto p = fit_on(d);
  CHECK((p.H - MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(p.Q.cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("degenerate inputs") {
  std::vector<double> x(200 * 6, 0.25), z(200 * 6, 1.0);
  try {
    fit_kalman(x, z, 6, 6);
    FAIL("expected a fit error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Fit);
  }
  CHECK_THROWS_AS(fit_kalman(std::vector<double>(12), std::vector<double>(18), 6, 6), Error);
  const auto p = scalar(1, 1, 1, 1);
  CHECK_THROWS_AS(kalman_step(p, scalar_state(0, 1), VectorXd::Zero(2)), Error);
}

TEST_CASE("covariance stays symmetric with a non-negative diagonal") {
  const auto d = noisy_decodes(2000, 2, 0.15);
  const auto p = fit_on(d);
  KalmanState s{VectorXd::Zero(6), p.W};
  for (std::size_t t = 0; t < 300; ++t) {
    s = kalman_step(p, s, Eigen::Map<const VectorXd>(d.noisy[t].data(), 6));
    REQUIRE(s.P == s.P.transpose());
    for (int i = 0; i < 6; ++i) REQUIRE(s.P(i, i) >= 0);
  }
}

TEST_CASE("smooth_stream") {
  const auto train = noisy_decodes(3000, 3, 0.15);
  const auto p = fit_on(train);

  SUBCASE("length one returns the clamped observation") {
    const std::vector<std::array<double, 6>> one{{0.5, -2.0, 1.5, 0.0, -0.3, 0.9}};
    const auto out = smooth_stream(p, one);
    REQUIRE(out.size() == 1);
    CHECK(out[0] == std::array<double, 6>{0.5, -1.0, 1.0, 0.0, -0.3, 0.9});
  }
  SUBCASE("smoother and no less accurate on held-out noisy decodes") {
    const auto test = noisy_decodes(1500, 4, 0.15);
    const auto out = smooth_stream(p, test.noisy);
    CHECK(msfd(out) <= 0.8 * msfd(test.noisy));
    CHECK(rmse(out, test.truth) <= 1.05 * rmse(test.noisy, test.truth));
  }
  SUBCASE("constant input converges") {
    const std::array<double, 6> c{0.4, -0.2, 0.1, 0.6, -0.5, 0.3};
    std::vector<std::array<double, 6>> zs(400, c);
    zs[0] = {};
    const auto out = smooth_stream(p, zs);
    auto err = [&](std::size_t t) {
      double e = 0;
      for (std::size_t d = 0; d < 6; ++d) e += (out[t][d] - c[d]) * (out[t][d] - c[d]);
      return std::sqrt(e);
    };
    // The fitted A is not exactly I, so the fixed point sits slightly off c:
    // the error shrinks monotonically until it reaches that small offset.
    const double floor = 0.02;
    for (std::size_t t = 2; t < out.size(); ++t) {
      if (err(t - 1) > floor) CHECK(err(t) <= err(t - 1) + 1e-12);
      else CHECK(err(t) < floor);
    }
    CHECK(err(399) < floor);
  }
}

TEST_CASE("parameter JSON round trip") {
  const auto p = fit_on(noisy_decodes(300, 5, 0.1));
  CHECK(kalman_from_json(kalman_to_json(p)) == p);
  CHECK_THROWS_AS(kalman_from_json("{\"A\":[[1]]}"), Error);
}
