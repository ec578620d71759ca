#pragma once

// Linear regression with ARMA(p, q) errors:
//
//   y_t = c + sum_i beta_i x_{it} + e_t
//   e_t = z_t + sum_i phi_i e_{t-i} + sum_i theta_i z_{t-i},  z_t ~ N(0, sigma2)
//
// The exact Gaussian likelihood is evaluated with a Kalman filter over the
// state-space form of the error process. Missing observations get a
// prediction step without an update.

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dropscan/ts_core.hpp"

namespace dropscan {

struct ArmaOrder {
  int p = 0;
  int q = 0;

  static constexpr int kMax = 7;
  bool valid() const noexcept { return p >= 0 && p <= kMax && q >= 0 && q <= kMax; }
  int parameter_count() const noexcept { return p + q + 2; }
  friend bool operator==(const ArmaOrder&, const ArmaOrder&) = default;
};

/// Exogenous regressors, one column per regressor (n rows).
struct RegressorMatrix {
  Eigen::MatrixXd columns;

  RegressorMatrix() = default;
  explicit RegressorMatrix(Eigen::MatrixXd x) : columns(std::move(x)) {}
  /// No regressors: intercept-only model.
  static RegressorMatrix empty(std::size_t n) {
    return RegressorMatrix(Eigen::MatrixXd(static_cast<Eigen::Index>(n), 0));
  }

  std::size_t rows() const noexcept { return static_cast<std::size_t>(columns.rows()); }
  std::size_t count() const noexcept { return static_cast<std::size_t>(columns.cols()); }
  /// Appends a one-point pulse at `index`.
  void add_pulse(std::size_t index);
};

struct ArmaParams {
  double c = 0.0;
  std::vector<double> phi;
  std::vector<double> theta;
  std::vector<double> beta;
  double sigma2 = 1.0;

  ArmaOrder order() const {
    return {static_cast<int>(phi.size()), static_cast<int>(theta.size())};
  }
};

struct ArmaFit {
  ArmaOrder order;
  double c = 0.0;
  std::vector<double> phi;
  std::vector<double> theta;
  std::vector<double> beta;
  double sigma2 = 0.0;
  double loglik = 0.0;
  /// Covariance over (c, phi, theta, beta) in that order. Empty when not
  /// requested.
  Eigen::MatrixXd param_cov;
  /// Set when the ARMA coefficients sit on the stationarity or invertibility
  /// boundary, where the full information matrix cannot be formed. param_cov
  /// then holds the (c, beta) block with phi and theta held fixed and zeros
  /// elsewhere.
  bool cov_conditional = false;
  bool converged = false;
  std::size_t n_effective = 0;
  int iterations = 0;
  double gradient_norm = 0.0;

  ArmaParams params() const { return {c, phi, theta, beta, sigma2}; }
  double aicc() const;
  /// Standard error of beta_i from param_cov.
  double beta_se(std::size_t i) const;
  /// One-step prediction errors scaled by sqrt(F_t / sigma2), so each has
  /// variance sigma2 under the model (NaN where missing).
  std::vector<double> residuals(const DiffSeries& series, const RegressorMatrix& x) const;
};

struct FitOptions {
  /// Lower bound on the innovation variance. Zero gives the plain MLE; a
  /// positive floor keeps exactly-explained integer series estimable.
  double min_innovation_variance = 0.0;
  bool compute_covariance = true;
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  /// Freeze the Riccati recursion once the innovation variance has settled,
  /// resuming after the next missing observation.
  bool steady_state_filter = true;
};

/// Exact Gaussian log-likelihood of the observed values.
///
/// Throws NonStationaryParams / NonInvertibleParams for parameters outside the
/// admissible region, and NumericalUnderflow when a prediction variance
/// collapses.
double loglikelihood(const ArmaParams& params, const DiffSeries& series,
                     const RegressorMatrix& x, bool steady_state_filter = true);

/// Exact gradient of loglikelihood() with respect to
/// (c, phi, theta, beta, sigma2), computed with forward-mode dual numbers.
Eigen::VectorXd loglikelihood_gradient(const ArmaParams& params, const DiffSeries& series,
                                       const RegressorMatrix& x,
                                       bool steady_state_filter = true);

/// Maximum-likelihood fit. Throws InsufficientData when n_effective <= k + 2
/// and SingularInformation when the observed information cannot be inverted.
ArmaFit fit(const DiffSeries& series, const RegressorMatrix& x, ArmaOrder order,
            const FitOptions& options = {});

/// AICc = -2 loglik + 2k + 2k(k+1)/(n-k-1). Throws DegenerateSampleSize when
/// n <= k + 1.
double aicc(double loglik, int k, std::size_t n);

struct OrderScore {
  ArmaOrder order;
  bool usable = false;
  double aicc = 0.0;
  double loglik = 0.0;
};

struct OrderSelection {
  ArmaOrder best;
  std::vector<OrderScore> scores;  // row-major over (p, q)
};

struct SelectOptions {
  int max_p = ArmaOrder::kMax;
  int max_q = ArmaOrder::kMax;
  FitOptions fit;
  unsigned threads = 1;
};

/// Grid search over (p, q) with an intercept-only model, minimising AICc.
/// Ties go to the smaller p + q, then the smaller p. Throws NoConvergedModel.
OrderSelection select_order_detailed(const DiffSeries& base_series,
                                     const SelectOptions& options = {});
ArmaOrder select_order(const DiffSeries& base_series, const SelectOptions& options = {});

/// Deterministic ARMA sample of length n after a burn-in of
/// 10 * max(p, q) + 50 discarded values.
DiffSeries simulate_arma(ArmaOrder order, double c, std::span<const double> phi,
                         std::span<const double> theta, double sigma2, std::size_t n,
                         std::uint64_t seed);

// Parameter-space helpers shared with the tests.

/// True when 1 - phi_1 z - ... - phi_p z^p has all roots outside the unit
/// circle.
bool is_stationary(std::span<const double> phi);
/// True when 1 + theta_1 z + ... + theta_q z^q has all roots outside the unit
/// circle.
bool is_invertible(std::span<const double> theta);

/// Maps unconstrained reals to the coefficients of a stationary AR polynomial
/// through partial autocorrelations kappa_k = tanh(u_k).
std::vector<double> pacf_to_ar(std::span<const double> u);
/// Inverse of pacf_to_ar. Returns nullopt for a non-stationary input.
std::optional<std::vector<double>> ar_to_pacf(std::span<const double> phi);

/// Concentrated objective used by fit(): the negative per-observation
/// log-likelihood with c, beta and sigma2 profiled out, as a function of the
/// unconstrained (phi, theta) coordinates.
class ConcentratedObjective {
 public:
  ConcentratedObjective(const DiffSeries& series, const RegressorMatrix& x, ArmaOrder order,
                        const FitOptions& options);

  /// Returns +inf outside the feasible region.
  double value(const Eigen::VectorXd& u) const;
  /// Value plus exact gradient.
  double value_and_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const;

  /// (phi, theta) for unconstrained coordinates u.
  std::pair<std::vector<double>, std::vector<double>> unpack(const Eigen::VectorXd& u) const;
  Eigen::VectorXd pack(std::span<const double> phi, std::span<const double> theta) const;

  /// GLS estimates of (c, beta) and the profiled sigma2 at u.
  struct Profile {
    double c = 0.0;
    std::vector<double> beta;
    double sigma2 = 0.0;
    double loglik = 0.0;
  };
  Profile profile(const Eigen::VectorXd& u) const;

  std::size_t n_obs() const noexcept { return n_obs_; }

 private:
  const DiffSeries* series_;
  ArmaOrder order_;
  FitOptions options_;
  Eigen::MatrixXd design_;  // intercept + active regressor columns
  std::vector<std::size_t> active_;
  std::size_t n_obs_ = 0;
  std::size_t total_regressors_ = 0;
};

}  // namespace dropscan
