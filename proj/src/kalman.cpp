#include "myoloop/kalman.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "myoloop/error.hpp"

namespace myo {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

MatrixXd view(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMajor>(data.data(), static_cast<Eigen::Index>(rows),
                                    static_cast<Eigen::Index>(cols));
}

MatrixXd symmetrize(const MatrixXd& m) { return 0.5 * (m + m.transpose()); }

/// argmin_B sum ||y_t - B x_t||^2 over rows; throws Fit when X is rank deficient.
MatrixXd least_squares(const MatrixXd& X, const MatrixXd& Y, const char* what) {
  Eigen::ColPivHouseholderQR<MatrixXd> qr(X);
  qr.setThreshold(1e-10);
  require(qr.rank() == X.cols(), ErrorKind::Fit,
          std::string("rank-deficient regressors while fitting ") + what);
  return qr.solve(Y).transpose();
}

MatrixXd residual_covariance(const MatrixXd& residual) {
  const auto rows = static_cast<double>(residual.rows());
  MatrixXd c = residual.transpose() * residual / rows;
  c = symmetrize(c);
  c.diagonal().array() += kKalmanRidge;
  return c;
}

nlohmann::json matrix_json(const MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

MatrixXd matrix_from(const nlohmann::json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    require(static_cast<Eigen::Index>(j.at(r).size()) == cols, ErrorKind::Parse,
            "ragged matrix in Kalman parameters");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j.at(r).at(c).get<double>();
  }
  return m;
}

}  // namespace

void KalmanParams::validate() const {
  const auto n = A.rows();
  require(n > 0 && A.cols() == n && W.rows() == n && W.cols() == n, ErrorKind::Shape,
          "Kalman A/W must be n x n");
  require(H.cols() == n && H.rows() > 0 && Q.rows() == H.rows() && Q.cols() == H.rows(),
          ErrorKind::Shape, "Kalman H must be m x n and Q m x m");
  require(W.isApprox(W.transpose(), 1e-9) && Q.isApprox(Q.transpose(), 1e-9), ErrorKind::Domain,
          "Kalman covariances must be symmetric");
}

KalmanParams fit_kalman(std::span<const double> states, std::span<const double> observations,
                        std::size_t n, std::size_t m) {
  require(n > 0 && m > 0, ErrorKind::Shape, "Kalman dimensions must be positive");
  require(states.size() % n == 0 && observations.size() % m == 0, ErrorKind::Shape,
          "Kalman fit buffers are not whole rows");
  const std::size_t T = states.size() / n;
  require(observations.size() / m == T, ErrorKind::Shape,
          "Kalman fit needs as many observations as states");
  require(T > n + m, ErrorKind::Fit, "too few samples to fit the Kalman filter");

  const MatrixXd X = view(states, T, n);
  const MatrixXd Z = view(observations, T, m);
  const auto t1 = static_cast<Eigen::Index>(T - 1);
  const MatrixXd X0 = X.topRows(t1);
  const MatrixXd X1 = X.bottomRows(t1);

  KalmanParams p;
  p.A = least_squares(X0, X1, "the state transition");
  p.W = residual_covariance(X1 - X0 * p.A.transpose());
  p.H = least_squares(X, Z, "the observation model");
  p.Q = residual_covariance(Z - X * p.H.transpose());
  return p;
}

KalmanState kalman_step(const KalmanParams& params, const KalmanState& state,
                        const Eigen::VectorXd& z) {
  const auto n = params.state_dim();
  require(state.x.size() == n && state.P.rows() == n && state.P.cols() == n, ErrorKind::Shape,
          "Kalman state does not match parameters");
  require(z.size() == params.obs_dim(), ErrorKind::Shape, "observation has the wrong dimension");

  const VectorXd x_pred = params.A * state.x;
  const MatrixXd P_pred = symmetrize(params.A * state.P * params.A.transpose() + params.W);
  const MatrixXd S = symmetrize(params.H * P_pred * params.H.transpose() + params.Q);

  Eigen::LDLT<MatrixXd> ldlt(S);
  require(ldlt.info() == Eigen::Success && ldlt.isPositive() && ldlt.rcond() > 1e-15,
          ErrorKind::Numeric, "innovation covariance is not invertible");
  // K = P- H^T S^-1  =>  K^T = S^-1 H P-
  const MatrixXd K = ldlt.solve(params.H * P_pred).transpose();

  KalmanState out;
  out.x = x_pred + K * (z - params.H * x_pred);
  out.P = symmetrize((MatrixXd::Identity(n, n) - K * params.H) * P_pred);
  for (Eigen::Index i = 0; i < n; ++i) out.P(i, i) = std::max(out.P(i, i), 0.0);
  require(out.x.allFinite() && out.P.allFinite(), ErrorKind::Numeric,
          "Kalman update produced non-finite values");
  return out;
}

std::array<double, 6> KalmanSmoother::step(const std::array<double, 6>& z) {
  require(params_->state_dim() == 6 && params_->obs_dim() == 6, ErrorKind::Shape,
          "smoothing needs a 6-state, 6-observation filter");
  const Eigen::VectorXd zv = Eigen::Map<const Eigen::VectorXd>(z.data(), 6);
  if (!started_) {
    state_.x = zv;
    state_.P = params_->W;
    started_ = true;
  } else {
    state_ = kalman_step(*params_, state_, zv);
  }
  std::array<double, 6> out{};
  for (int d = 0; d < 6; ++d) out[static_cast<std::size_t>(d)] = std::clamp(state_.x(d), -1.0, 1.0);
  return out;
}

std::vector<std::array<double, 6>> smooth_stream(const KalmanParams& params,
                                                 std::span<const std::array<double, 6>> zs) {
  KalmanSmoother smoother(params);
  std::vector<std::array<double, 6>> out;
  out.reserve(zs.size());
  for (const auto& z : zs) out.push_back(smoother.step(z));
  return out;
}

std::string kalman_to_json(const KalmanParams& p) {
  nlohmann::json j = {{"A", matrix_json(p.A)},
                      {"W", matrix_json(p.W)},
                      {"H", matrix_json(p.H)},
                      {"Q", matrix_json(p.Q)}};
  return j.dump();
}

KalmanParams kalman_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    KalmanParams p;
    p.A = matrix_from(j.at("A"));
    p.W = matrix_from(j.at("W"));
    p.H = matrix_from(j.at("H"));
    p.Q = matrix_from(j.at("Q"));
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Parse, std::string("Kalman parameters: ") + e.what());
  }
}

}  // namespace myo
