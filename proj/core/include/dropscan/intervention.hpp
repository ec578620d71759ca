#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dropscan/arma.hpp"
#include "dropscan/ts_core.hpp"

namespace dropscan {

/// The server's SYN/ACK transmissions per half-open connection: r in total,
/// at offsets_ms relative to the first one.
struct RetransSchedule {
  int r = 1;
  std::vector<std::int64_t> offsets_ms{0};

  /// Throws InvalidArgument unless offsets are r strictly increasing values
  /// starting at 0.
  void validate() const;
  static RetransSchedule from_offsets(std::vector<std::int64_t> offsets);
  friend bool operator==(const RetransSchedule&, const RetransSchedule&) = default;
};

struct TestConfig {
  int s = 5;  // forged SYNs per sampling interval
  double alpha_outlier = 0.05;
  double alpha_test = 0.01;
  int max_outlier_iterations = 10;
  /// Variance floor for the innovations. IPID increments are integers, so the
  /// uniform rounding variance 1/12 bounds what the data can resolve.
  double min_innovation_variance = 1.0 / 12.0;
  unsigned threads = 1;

  void validate() const;
  double k1() const noexcept { return s / 2.0; }
  double k2(int r) const noexcept { return (1.0 + r) * s / 2.0; }
  double k2_prime(int r) const noexcept;
};

enum class VerdictCase : std::uint8_t {
  ServerToClientDropped,
  NoPacketsDropped,
  ClientToServerDropped,
  Error,
};

std::string_view to_string(VerdictCase c) noexcept;
std::optional<VerdictCase> verdict_case_from_string(std::string_view s) noexcept;

struct Verdict {
  VerdictCase kase = VerdictCase::Error;
  std::string reason;
  double beta_r_hat = 0.0;
  double beta_r_se = 0.0;
  double k1 = 0.0;
  double k2prime = 0.0;
  std::optional<ArmaOrder> order;
  std::vector<std::size_t> outlier_indices;

  static Verdict error(std::string reason);
  bool is_error() const noexcept { return kase == VerdictCase::Error; }
  /// NaN estimates (as left by error()) compare equal to each other.
  friend bool operator==(const Verdict& a, const Verdict& b) noexcept;
};

/// Indicator regressors for the retransmission stages. Stage i starts at
/// t_i = t1_index + round(offset_i / interval_ms); x_i covers [t_i, t_{i+1})
/// and x_r covers [t_r, n). Stages that round onto the same index collapse
/// into the later column. Throws ScheduleExceedsSeries.
RegressorMatrix build_regressors(const RetransSchedule& schedule, std::size_t t1_index, std::size_t n,
                                 int interval_ms);

/// Two-sided Bonferroni critical value z_{1 - alpha / (2 n)}.
double outlier_critical_value(double alpha, std::size_t n_effective);

/// Standardised additive-outlier statistic at every index (NaN where the
/// observation is missing), built from the fitted model's residuals and
/// pi-weights.
std::vector<double> additive_outlier_statistics(const DiffSeries& series, const ArmaFit& fit,
                                                const RegressorMatrix& x);

struct CleanedFit {
  ArmaFit fit;
  RegressorMatrix x;  // input regressors followed by one pulse per outlier
  std::vector<std::size_t> outlier_indices;
};

/// Iteratively flags the largest significant additive outlier, absorbs it with
/// a pulse regressor and refits, until nothing exceeds the critical value or
/// the iteration cap is reached. Throws RefitFailed.
CleanedFit remove_outliers(const DiffSeries& series, const ArmaFit& fit, const RegressorMatrix& x,
                           const TestConfig& config);

/// One-sided z-tests on beta_r against k1 = s/2 and k2' = min(2s, (1+r)s/2).
Verdict classify(double beta_r_hat, double beta_r_se, const RetransSchedule& schedule,
                 const TestConfig& config);

/// Full pipeline: order selection on the base segment, fit with the
/// retransmission regressors, outlier removal, classification. Never throws
/// for analysis failures; they become Verdict::Error.
Verdict analyze(const DiffSeries& series, const RetransSchedule& schedule, const TestConfig& config);

}  // namespace dropscan
