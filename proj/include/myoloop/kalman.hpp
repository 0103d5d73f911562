#pragma once

// Linear Kalman filter in the usual neural-decoding form:
//   x_{t+1} = A x_t + w,  w ~ N(0, W)
//   z_t     = H x_t + q,  q ~ N(0, Q)
// used causally, either to smooth network outputs (m = n = 6) or as a
// baseline decoder on feature channels (m = n_channels).

#include <array>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace myo {

struct KalmanParams {
  Eigen::MatrixXd A;  // n x n
  Eigen::MatrixXd W;  // n x n
  Eigen::MatrixXd H;  // m x n
  Eigen::MatrixXd Q;  // m x m

  Eigen::Index state_dim() const { return A.rows(); }
  Eigen::Index obs_dim() const { return H.rows(); }
  void validate() const;
  bool operator==(const KalmanParams& o) const {
    return A == o.A && W == o.W && H == o.H && Q == o.Q;
  }
};

struct KalmanState {
  Eigen::VectorXd x;
  Eigen::MatrixXd P;
};

inline constexpr double kKalmanRidge = 1e-8;

/// Least-squares system identification. `states` is [T x n] row-major,
/// `observations` [T x m].
KalmanParams fit_kalman(std::span<const double> states, std::span<const double> observations,
                        std::size_t n, std::size_t m);

/// One predict/update step.
KalmanState kalman_step(const KalmanParams& params, const KalmanState& state,
                        const Eigen::VectorXd& z);

/// Causal smoother over a stream of 6-vectors: x0 = z0, P0 = W, outputs
/// clamped to [-1, 1].
std::vector<std::array<double, 6>> smooth_stream(const KalmanParams& params,
                                                 std::span<const std::array<double, 6>> zs);

/// Streaming form of smooth_stream for the online loop.
class KalmanSmoother {
 public:
  explicit KalmanSmoother(const KalmanParams& params) : params_(&params) {}
  std::array<double, 6> step(const std::array<double, 6>& z);
  void reset() { started_ = false; }

 private:
  const KalmanParams* params_;
  KalmanState state_;
  bool started_ = false;
};

std::string kalman_to_json(const KalmanParams& p);
KalmanParams kalman_from_json(const std::string& text);

}  // namespace myo
