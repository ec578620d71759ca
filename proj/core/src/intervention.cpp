#include "dropscan/intervention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>

#include "dropscan/error.hpp"

namespace dropscan {

namespace {

double normal_upper_quantile(double tail) {
  static const boost::math::normal standard;
  return boost::math::quantile(boost::math::complement(standard, tail));
}

// Coefficients of phi(B) / theta(B), length n.
std::vector<double> pi_weights(const std::vector<double>& phi, const std::vector<double>& theta, std::size_t n) {
  std::vector<double> c(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double v = j == 0 ? 1.0 : (j <= phi.size() ? -phi[j - 1] : 0.0);
    for (std::size_t i = 1; i <= std::min(j, theta.size()); ++i) v -= theta[i - 1] * c[j - i];
    c[j] = v;
    if (j > 8 && std::abs(v) < 1e-14) break;  // remainder negligible
  }
  return c;
}

// Indices carried by single-point regressor columns.
std::vector<std::size_t> pulse_indices(const RegressorMatrix& x) {
  std::vector<std::size_t> out;
  for (Eigen::Index j = 0; j < x.columns.cols(); ++j) {
    Eigen::Index nz = 0, at = 0;
    for (Eigen::Index t = 0; t < x.columns.rows(); ++t) {
      if (x.columns(t, j) != 0.0) {
        ++nz;
        at = t;
      }
    }
    if (nz == 1) out.push_back(static_cast<std::size_t>(at));
  }
  return out;
}

}  // namespace

void RetransSchedule::validate() const {
  if (r < 1) throw Error(ErrorKind::InvalidArgument, "r must be at least 1");
  if (offsets_ms.size() != static_cast<std::size_t>(r)) {
    throw Error(ErrorKind::InvalidArgument, "schedule has " + std::to_string(offsets_ms.size()) +
                                                " offsets for r = " + std::to_string(r));
  }
  if (offsets_ms.front() != 0) throw Error(ErrorKind::InvalidArgument, "first offset must be 0");
  for (std::size_t i = 1; i < offsets_ms.size(); ++i) {
    if (offsets_ms[i] <= offsets_ms[i - 1]) {
      throw Error(ErrorKind::InvalidArgument, "offsets must be strictly increasing");
    }
  }
}

RetransSchedule RetransSchedule::from_offsets(std::vector<std::int64_t> offsets) {
  RetransSchedule s;
  s.r = static_cast<int>(offsets.size());
  s.offsets_ms = std::move(offsets);
  s.validate();
  return s;
}

void TestConfig::validate() const {
  if (s < 1) throw Error(ErrorKind::InvalidArgument, "s must be positive");
  if (!(alpha_outlier > 0.0 && alpha_outlier < 1.0) || !(alpha_test > 0.0 && alpha_test < 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "significance levels must lie in (0, 1)");
  }
  if (max_outlier_iterations < 0) throw Error(ErrorKind::InvalidArgument, "max_outlier_iterations < 0");
  if (min_innovation_variance < 0.0) throw Error(ErrorKind::InvalidArgument, "negative variance floor");
}

double TestConfig::k2_prime(int r) const noexcept { return std::min(2.0 * s, k2(r)); }

std::string_view to_string(VerdictCase c) noexcept {
  switch (c) {
    case VerdictCase::ServerToClientDropped: return "ServerToClientDropped";
    case VerdictCase::NoPacketsDropped: return "NoPacketsDropped";
    case VerdictCase::ClientToServerDropped: return "ClientToServerDropped";
    case VerdictCase::Error: return "Error";
  }
  return "Error";
}

std::optional<VerdictCase> verdict_case_from_string(std::string_view s) noexcept {
  for (auto c : {VerdictCase::ServerToClientDropped, VerdictCase::NoPacketsDropped,
                 VerdictCase::ClientToServerDropped, VerdictCase::Error}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

Verdict Verdict::error(std::string reason) {
  Verdict v;
  v.kase = VerdictCase::Error;
  v.reason = reason.empty() ? "unspecified" : std::move(reason);
  v.beta_r_hat = std::numeric_limits<double>::quiet_NaN();
  v.beta_r_se = std::numeric_limits<double>::quiet_NaN();
  return v;
}

bool operator==(const Verdict& a, const Verdict& b) noexcept {
  auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
  return a.kase == b.kase && a.reason == b.reason && same(a.beta_r_hat, b.beta_r_hat) &&
         same(a.beta_r_se, b.beta_r_se) && same(a.k1, b.k1) && same(a.k2prime, b.k2prime) && a.order == b.order &&
         a.outlier_indices == b.outlier_indices;
}

RegressorMatrix build_regressors(const RetransSchedule& schedule, std::size_t t1_index, std::size_t n,
                                 int interval_ms) {
  schedule.validate();
  if (interval_ms <= 0) throw Error(ErrorKind::InvalidArgument, "interval_ms must be positive");
  const double width = static_cast<double>(interval_ms);
  const auto last_span =
      static_cast<std::size_t>(std::ceil(static_cast<double>(schedule.offsets_ms.back()) / width));
  if (t1_index + last_span >= n) {
    throw Error(ErrorKind::ScheduleExceedsSeries,
                "last retransmission at index " + std::to_string(t1_index + last_span) +
                    " does not fit a series of length " + std::to_string(n));
  }

  std::vector<std::size_t> starts;
  for (auto off : schedule.offsets_ms) {
    starts.push_back(t1_index + static_cast<std::size_t>(std::llround(static_cast<double>(off) / width)));
  }
  // Drop stages whose start coincides with the next one.
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    if (i + 1 < starts.size() && starts[i + 1] <= starts[i]) continue;
    kept.push_back(starts[i]);
  }

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const std::size_t end = i + 1 < kept.size() ? kept[i + 1] : n;
    for (std::size_t j = kept[i]; j < end; ++j) x(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = 1.0;
  }
  return RegressorMatrix(std::move(x));
}

double outlier_critical_value(double alpha, std::size_t n_effective) {
  const double n = static_cast<double>(std::max<std::size_t>(n_effective, 1));
  return normal_upper_quantile(alpha / (2.0 * n));
}

std::vector<double> additive_outlier_statistics(const DiffSeries& series, const ArmaFit& fit,
                                                const RegressorMatrix& x) {
  const std::size_t n = series.size();
  const auto resid = fit.residuals(series, x);
  const auto pi = pi_weights(fit.phi, fit.theta, n);
  const double sigma = std::sqrt(fit.sigma2);
  std::vector<double> stat(n, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t t = 0; t < n; ++t) {
    if (series.missing[t]) continue;
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; t + j < n && j < pi.size(); ++j) {
      if (series.missing[t + j]) continue;
      num += pi[j] * resid[t + j];
      den += pi[j] * pi[j];
    }
    stat[t] = den > 0.0 && sigma > 0.0 ? num / (sigma * std::sqrt(den)) : 0.0;
  }
  return stat;
}

CleanedFit remove_outliers(const DiffSeries& series, const ArmaFit& fit, const RegressorMatrix& x,
                           const TestConfig& config) {
  CleanedFit out{fit, x, {}};
  FitOptions options;
  options.min_innovation_variance = config.min_innovation_variance;
  const double crit = outlier_critical_value(config.alpha_outlier, series.n_effective());
  std::vector<std::size_t> excluded = pulse_indices(x);

  for (int iter = 0; iter < config.max_outlier_iterations; ++iter) {
    std::vector<double> stat;
    try {
      stat = additive_outlier_statistics(series, out.fit, out.x);
    } catch (const Error& e) {
      throw Error(ErrorKind::RefitFailed, e.what());
    }
    std::size_t best = stat.size();
    double best_abs = crit;
    for (std::size_t t = 0; t < stat.size(); ++t) {
      if (!std::isfinite(stat[t])) continue;
      if (std::find(excluded.begin(), excluded.end(), t) != excluded.end()) continue;
      if (std::abs(stat[t]) > best_abs) {
        best_abs = std::abs(stat[t]);
        best = t;
      }
    }
    if (best == stat.size()) break;

    out.x.add_pulse(best);
    out.outlier_indices.push_back(best);
    excluded.push_back(best);
    try {
      out.fit = dropscan::fit(series, out.x, out.fit.order, options);
    } catch (const Error& e) {
      throw Error(ErrorKind::RefitFailed, e.what());
    }
  }
  return out;
}

Verdict classify(double beta_r_hat, double beta_r_se, const RetransSchedule& schedule, const TestConfig& config) {
  Verdict v;
  v.beta_r_hat = beta_r_hat;
  v.beta_r_se = beta_r_se;
  v.k1 = config.k1();
  v.k2prime = config.k2_prime(schedule.r);
  if (!std::isfinite(beta_r_hat) || !std::isfinite(beta_r_se) || !(beta_r_se > 0.0)) {
    Verdict e = Verdict::error("beta_r estimate or standard error unavailable");
    e.k1 = v.k1;
    e.k2prime = v.k2prime;
    return e;
  }
  const double z_crit = normal_upper_quantile(config.alpha_test);
  const double z1 = (beta_r_hat - v.k1) / beta_r_se;
  const double z2 = (beta_r_hat - v.k2prime) / beta_r_se;

  if (z1 < -z_crit) {
    v.kase = VerdictCase::ServerToClientDropped;
  } else if (z1 > z_crit && z2 < -z_crit) {
    v.kase = VerdictCase::NoPacketsDropped;
  } else if (z2 > z_crit) {
    v.kase = VerdictCase::ClientToServerDropped;
  } else {
    v.kase = VerdictCase::Error;
    v.reason = "indeterminate";
  }
  return v;
}

Verdict analyze(const DiffSeries& series, const RetransSchedule& schedule, const TestConfig& config) {
  std::optional<ArmaOrder> order;
  try {
    config.validate();
    series.validate();
    schedule.validate();

    SelectOptions select;
    select.fit.min_innovation_variance = config.min_innovation_variance;
    select.threads = config.threads;
    order = select_order(series.base_segment(), select);

    const RegressorMatrix x = build_regressors(schedule, series.t1_index, series.size(), series.interval_ms);
    FitOptions options;
    options.min_innovation_variance = config.min_innovation_variance;
    const ArmaFit initial = fit(series, x, *order, options);
    if (!initial.converged) {
      Verdict v = Verdict::error("model fit did not converge");
      v.order = order;
      return v;
    }
    const CleanedFit cleaned = remove_outliers(series, initial, x, config);
    if (!cleaned.fit.converged) {
      Verdict v = Verdict::error("refit after outlier removal did not converge");
      v.order = order;
      v.outlier_indices = cleaned.outlier_indices;
      return v;
    }
    const std::size_t r_col = x.count() - 1;
    Verdict v = classify(cleaned.fit.beta[r_col], cleaned.fit.beta_se(r_col), schedule, config);
    v.order = order;
    v.outlier_indices = cleaned.outlier_indices;
    return v;
  } catch (const Error& e) {
    Verdict v = Verdict::error(e.what());
    v.order = order;
    v.k1 = config.k1();
    v.k2prime = config.k2_prime(schedule.r);
    return v;
  }
}

}  // namespace dropscan
