#include "dropscan/arma.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <thread>

#include "dropscan/dual.hpp"
#include "dropscan/error.hpp"
#include "dropscan/optimizer.hpp"

namespace dropscan {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // ln(2 pi)

using std::log;
using std::sqrt;
using std::tanh;

// ---------------------------------------------------------------------------
// Partial-autocorrelation reparameterisation.

template <class S>
std::vector<S> pacf_to_ar_t(const std::vector<S>& u) {
  const std::size_t p = u.size();
  std::vector<S> a(p), prev(p);
  for (std::size_t k = 0; k < p; ++k) {
    const S kappa = tanh(u[k]);
    prev = a;
    a[k] = kappa;
    for (std::size_t j = 0; j < k; ++j) a[j] = prev[j] - kappa * prev[k - 1 - j];
  }
  return a;
}

// ---------------------------------------------------------------------------
// State-space form of the ARMA error process (Harvey):
//   alpha_{t+1} = T alpha_t + R z_{t+1},  e_t = alpha_t[0]
// with T = [phi | I; 0] and R = (1, theta_1, ..., theta_{m-1}).

template <class S>
struct StateSpace {
  int m = 1;
  std::vector<S> tphi;  // first column of T, length m
  std::vector<S> r;     // length m
};

template <class S>
StateSpace<S> make_state_space(const std::vector<S>& phi, const std::vector<S>& theta) {
  StateSpace<S> ss;
  const int p = static_cast<int>(phi.size());
  const int q = static_cast<int>(theta.size());
  ss.m = std::max(p, q + 1);
  ss.tphi.assign(static_cast<std::size_t>(ss.m), S(0.0));
  ss.r.assign(static_cast<std::size_t>(ss.m), S(0.0));
  for (int i = 0; i < p; ++i) ss.tphi[static_cast<std::size_t>(i)] = phi[static_cast<std::size_t>(i)];
  ss.r[0] = S(1.0);
  for (int i = 0; i < q; ++i) ss.r[static_cast<std::size_t>(i + 1)] = theta[static_cast<std::size_t>(i)];
  return ss;
}

inline bool is_structural_zero(double x) { return x == 0.0; }
template <int N>
bool is_structural_zero(const Dual<N>& x) {
  if (x.v != 0.0) return false;
  for (double d : x.d)
    if (d != 0.0) return false;
  return true;
}

// Row-major m x m products for small matrices of S.
template <class S>
void matmul(const std::vector<S>& a, const std::vector<S>& b, std::vector<S>& out, int m) {
  out.assign(static_cast<std::size_t>(m * m), S(0.0));
  for (int i = 0; i < m; ++i) {
    for (int k = 0; k < m; ++k) {
      const S& aik = a[static_cast<std::size_t>(i * m + k)];
      if (is_structural_zero(aik)) continue;
      for (int j = 0; j < m; ++j) {
        out[static_cast<std::size_t>(i * m + j)] += aik * b[static_cast<std::size_t>(k * m + j)];
      }
    }
  }
}

template <class S>
void transpose(const std::vector<S>& a, std::vector<S>& out, int m) {
  out.resize(static_cast<std::size_t>(m * m));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      out[static_cast<std::size_t>(j * m + i)] = a[static_cast<std::size_t>(i * m + j)];
}

// Stationary covariance P = T P T' + R R' by doubling:
//   P_{k+1} = P_k + A_k P_k A_k',  A_{k+1} = A_k^2.
template <class S>
bool initial_covariance(const StateSpace<S>& ss, std::vector<S>& p) {
  const int m = ss.m;
  p.assign(static_cast<std::size_t>(m * m), S(0.0));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      p[static_cast<std::size_t>(i * m + j)] = ss.r[static_cast<std::size_t>(i)] * ss.r[static_cast<std::size_t>(j)];
  if (m == 1 && value_of(ss.tphi[0]) == 0.0) {
    bool constant = true;
    if constexpr (!std::is_same_v<S, double>) {
      for (double d : ss.tphi[0].d) constant = constant && d == 0.0;
    }
    if (constant) return true;
  }

  std::vector<S> a(static_cast<std::size_t>(m * m), S(0.0));
  for (int i = 0; i < m; ++i) {
    a[static_cast<std::size_t>(i * m)] = ss.tphi[static_cast<std::size_t>(i)];
    if (i + 1 < m) a[static_cast<std::size_t>(i * m + i + 1)] = S(1.0);
  }
  std::vector<S> ap, at, apat, aa;
  for (int iter = 0; iter < 80; ++iter) {
    matmul(a, p, ap, m);
    transpose(a, at, m);
    matmul(ap, at, apat, m);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] += apat[k];
    matmul(a, a, aa, m);
    a.swap(aa);
    double amax = 0.0;
    for (const auto& x : a) amax = std::max(amax, std::abs(value_of(x)));
    if (!std::isfinite(amax)) return false;
    if (amax < 1e-15) {
      for (const auto& x : p)
        if (!std::isfinite(value_of(x))) return false;
      return true;
    }
  }
  return false;
}

// Runs the filter over `ns` series sharing the same model and missing mask.
// `data(s, t)` yields observation t of series s; `visit(t, f, v)` is called on
// every observed index with the prediction variance f (in units of sigma2)
// and the innovations v[0..ns).
template <class S, class DataFn, class Visit>
bool run_filter(const StateSpace<S>& ss, const std::vector<bool>& missing, std::size_t ns,
                DataFn&& data, Visit&& visit, bool allow_steady) {
  const int m = ss.m;
  const auto mm = static_cast<std::size_t>(m);
  std::vector<S> p;
  if (!initial_covariance(ss, p)) return false;

  std::vector<S> a(ns * mm, S(0.0));
  std::vector<S> v(ns, S(0.0));
  std::vector<S> gain(mm, S(0.0));
  std::vector<S> tp(mm * mm);
  std::vector<S> row0(mm);
  bool steady = false;
  bool prev_observed = false;
  double prev_f = 0.0;

  for (std::size_t t = 0; t < missing.size(); ++t) {
    if (!missing[t]) {
      const S f = p[0];
      const double fv = value_of(f);
      if (!(fv > 1e-300) || !std::isfinite(fv)) return false;
      for (std::size_t s = 0; s < ns; ++s) v[s] = data(s, t) - a[s * mm];
      visit(t, f, v);
      if (!steady) {
        for (std::size_t i = 0; i < mm; ++i) gain[i] = p[i * mm] / f;
      }
      for (std::size_t s = 0; s < ns; ++s) {
        for (std::size_t i = 0; i < mm; ++i) a[s * mm + i] += gain[i] * v[s];
      }
      if (!steady) {
        // P <- P - P[:,0] P[0,:] / f; row and column 0 become exactly zero.
        for (std::size_t j = 0; j < mm; ++j) row0[j] = p[j];
        for (std::size_t i = 1; i < mm; ++i) {
          const S gi = gain[i];
          for (std::size_t j = 1; j < mm; ++j) p[i * mm + j] -= gi * row0[j];
        }
        for (std::size_t j = 0; j < mm; ++j) {
          p[j] = S(0.0);
          p[j * mm] = S(0.0);
        }
      }
    } else if (steady) {
      steady = false;
    }

    // Predict: a <- T a
    for (std::size_t s = 0; s < ns; ++s) {
      S* as = &a[s * mm];
      const S a0 = as[0];
      for (std::size_t i = 0; i + 1 < mm; ++i) as[i] = ss.tphi[i] * a0 + as[i + 1];
      as[mm - 1] = ss.tphi[mm - 1] * a0;
    }
    if (!steady) {
      // P <- T P T' + R R'
      for (std::size_t i = 0; i < mm; ++i) {
        for (std::size_t j = 0; j < mm; ++j) {
          S x = ss.tphi[i] * p[j];
          if (i + 1 < mm) x += p[(i + 1) * mm + j];
          tp[i * mm + j] = x;
        }
      }
      for (std::size_t i = 0; i < mm; ++i) {
        for (std::size_t j = 0; j < mm; ++j) {
          S x = tp[i * mm] * ss.tphi[j];
          if (j + 1 < mm) x += tp[i * mm + j + 1];
          p[i * mm + j] = x + ss.r[i] * ss.r[j];
        }
      }
      const double f_next = value_of(p[0]);
      if (allow_steady && !missing[t] && prev_observed && std::abs(f_next - prev_f) < 1e-11 * f_next) {
        steady = true;
        for (std::size_t i = 0; i < mm; ++i) gain[i] = p[i * mm] / p[0];
      }
      prev_f = f_next;
    }
    prev_observed = !missing[t];
  }
  return true;
}

// ---------------------------------------------------------------------------
// Small dense Cholesky solve templated on the scalar type.

template <class S>
bool cholesky_solve(std::vector<S> w, std::vector<S> b, std::size_t k, std::vector<S>& x) {
  for (std::size_t j = 0; j < k; ++j) {
    S d = w[j * k + j];
    for (std::size_t l = 0; l < j; ++l) d -= w[j * k + l] * w[j * k + l];
    if (!(value_of(d) > 0.0)) return false;
    const S ljj = sqrt(d);
    w[j * k + j] = ljj;
    for (std::size_t i = j + 1; i < k; ++i) {
      S s = w[i * k + j];
      for (std::size_t l = 0; l < j; ++l) s -= w[i * k + l] * w[j * k + l];
      w[i * k + j] = s / ljj;
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    S s = b[i];
    for (std::size_t l = 0; l < i; ++l) s -= w[i * k + l] * b[l];
    b[i] = s / w[i * k + i];
  }
  for (std::size_t ii = k; ii-- > 0;) {
    S s = b[ii];
    for (std::size_t l = ii + 1; l < k; ++l) s -= w[l * k + ii] * b[l];
    b[ii] = s / w[ii * k + ii];
  }
  x = std::move(b);
  return true;
}

struct ProfileTerms {
  bool ok = false;
  std::vector<double> coef;  // (c, beta_active)
};

// Concentrated log-likelihood in S. Writes the GLS coefficients when
// `coef_out` is non-null.
template <class S>
S concentrated_loglik(const std::vector<S>& phi, const std::vector<S>& theta,
                      const DiffSeries& series, const Eigen::MatrixXd& design, double floor,
                      bool allow_steady, std::vector<double>* coef_out, double* sigma2_out,
                      bool* ok) {
  *ok = false;
  const auto ss = make_state_space(phi, theta);
  const std::size_t k = static_cast<std::size_t>(design.cols());
  const std::size_t ns = k + 1;
  std::vector<S> w(k * k, S(0.0)), b(k, S(0.0));
  S yy(0.0), sum_log_f(0.0);
  std::size_t n = 0;

  auto data = [&](std::size_t s, std::size_t t) -> S {
    if (s == 0) return S(series.values[t]);
    return S(design(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(s - 1)));
  };
  auto visit = [&](std::size_t, const S& f, const std::vector<S>& v) {
    const S winv = 1.0 / f;
    sum_log_f += log(f);
    const S vy = v[0] * winv;
    yy += v[0] * vy;
    for (std::size_t i = 0; i < k; ++i) {
      const S vi = v[i + 1] * winv;
      b[i] += vi * v[0];
      for (std::size_t j = 0; j <= i; ++j) w[i * k + j] += vi * v[j + 1];
    }
    ++n;
  };
  if (!run_filter(ss, series.missing, ns, data, visit, allow_steady)) return S(0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) w[i * k + j] = w[j * k + i];

  std::vector<S> coef;
  if (!cholesky_solve(w, b, k, coef)) return S(0.0);
  S rss = yy;
  for (std::size_t i = 0; i < k; ++i) rss -= b[i] * coef[i];
  if (value_of(rss) < 0.0) rss = S(0.0);

  const double nd = static_cast<double>(n);
  S ll(0.0);
  S sigma2 = rss / nd;
  if (value_of(sigma2) < floor) {
    sigma2 = S(floor);
    ll = -0.5 * nd * (kLog2Pi + std::log(floor)) - 0.5 * sum_log_f - rss / (2.0 * floor);
  } else {
    if (!(value_of(sigma2) > 1e-300)) return S(0.0);
    ll = -0.5 * nd * (kLog2Pi + 1.0) - 0.5 * nd * log(sigma2) - 0.5 * sum_log_f;
  }
  if (!std::isfinite(value_of(ll))) return S(0.0);
  if (coef_out) {
    coef_out->resize(k);
    for (std::size_t i = 0; i < k; ++i) (*coef_out)[i] = value_of(coef[i]);
  }
  if (sigma2_out) *sigma2_out = value_of(sigma2);
  *ok = true;
  return ll;
}

// Exact log-likelihood at explicit parameters, scalar type S.
template <class S>
S full_loglik(const std::vector<S>& phi, const std::vector<S>& theta, const S& c,
              const std::vector<S>& beta, const S& sigma2, const DiffSeries& series,
              const Eigen::MatrixXd& x, bool allow_steady, bool* ok) {
  *ok = false;
  const auto ss = make_state_space(phi, theta);
  S ll(0.0);
  auto data = [&](std::size_t, std::size_t t) -> S {
    S mu = c;
    for (std::size_t j = 0; j < beta.size(); ++j)
      mu += beta[j] * x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
    return S(series.values[t]) - mu;
  };
  auto visit = [&](std::size_t, const S& f, const std::vector<S>& v) {
    const S var = sigma2 * f;
    ll += -0.5 * (kLog2Pi + log(var) + v[0] * v[0] / var);
  };
  if (!run_filter(ss, series.missing, 1, data, visit, allow_steady)) return S(0.0);
  *ok = std::isfinite(value_of(ll));
  return ll;
}

void check_admissible(std::span<const double> phi, std::span<const double> theta) {
  if (!is_stationary(phi)) throw Error(ErrorKind::NonStationaryParams, "AR polynomial has a root inside the unit circle");
  if (!is_invertible(theta)) throw Error(ErrorKind::NonInvertibleParams, "MA polynomial has a root inside the unit circle");
}

void check_dimensions(const DiffSeries& series, const RegressorMatrix& x) {
  if (series.values.size() != series.missing.size()) {
    throw Error(ErrorKind::InvalidArgument, "values and missing mask differ in length");
  }
  if (x.rows() != series.size()) {
    throw Error(ErrorKind::InvalidArgument, "regressor length " + std::to_string(x.rows()) +
                                                " does not match series length " + std::to_string(series.size()));
  }
}

// Profile log-likelihood at natural parameters (c, phi, theta, beta_active),
// sigma2 concentrated out. Used for the observed information.
double profile_loglik_natural(const Eigen::VectorXd& nat, ArmaOrder order, const DiffSeries& series,
                              const Eigen::MatrixXd& design_active, double floor, bool steady) {
  const auto p = static_cast<std::size_t>(order.p);
  const auto q = static_cast<std::size_t>(order.q);
  std::vector<double> phi(p), theta(q);
  for (std::size_t i = 0; i < p; ++i) phi[i] = nat(static_cast<Eigen::Index>(1 + i));
  for (std::size_t i = 0; i < q; ++i) theta[i] = nat(static_cast<Eigen::Index>(1 + p + i));
  if (!is_stationary(phi) || !is_invertible(theta)) return std::numeric_limits<double>::quiet_NaN();
  const double c = nat(0);
  const auto kb = static_cast<std::size_t>(design_active.cols());
  const auto ss = make_state_space(phi, theta);
  double rss = 0.0, sum_log_f = 0.0;
  std::size_t n = 0;
  auto data = [&](std::size_t, std::size_t t) -> double {
    double mu = c;
    for (std::size_t j = 0; j < kb; ++j)
      mu += nat(static_cast<Eigen::Index>(1 + p + q + j)) *
            design_active(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
    return series.values[t] - mu;
  };
  auto visit = [&](std::size_t, double f, const std::vector<double>& v) {
    rss += v[0] * v[0] / f;
    sum_log_f += std::log(f);
    ++n;
  };
  if (!run_filter(ss, series.missing, 1, data, visit, steady)) return std::numeric_limits<double>::quiet_NaN();
  const double nd = static_cast<double>(n);
  const double sigma2 = std::max(rss / nd, floor);
  if (!(sigma2 > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return -0.5 * nd * (kLog2Pi + std::log(sigma2)) - 0.5 * sum_log_f - rss / (2.0 * sigma2);
}

// Least squares on the rows where every entry is finite.
std::optional<Eigen::VectorXd> least_squares(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (std::isfinite(b(i)) && a.row(i).allFinite()) rows.push_back(i);
  }
  if (static_cast<Eigen::Index>(rows.size()) <= a.cols()) return std::nullopt;
  Eigen::MatrixXd aa(static_cast<Eigen::Index>(rows.size()), a.cols());
  Eigen::VectorXd bb(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    aa.row(static_cast<Eigen::Index>(i)) = a.row(rows[i]);
    bb(static_cast<Eigen::Index>(i)) = b(rows[i]);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(aa);
  if (qr.rank() < a.cols()) return std::nullopt;
  return Eigen::VectorXd(qr.solve(bb));
}

// Shrinks coefficients towards zero until `ok` holds.
template <class Pred>
std::vector<double> shrink_until(std::vector<double> coef, Pred ok) {
  for (int i = 0; i < 60 && !ok(coef); ++i)
    for (auto& c : coef) c *= 0.85;
  if (!ok(coef)) std::fill(coef.begin(), coef.end(), 0.0);
  return coef;
}

// Two-stage (Hannan-Rissanen) starting values for phi and theta from the OLS
// residuals of the regression part.
std::pair<std::vector<double>, std::vector<double>> initial_arma(const DiffSeries& series,
                                                                 const Eigen::MatrixXd& design,
                                                                 ArmaOrder order) {
  const auto p = static_cast<std::size_t>(order.p);
  const auto q = static_cast<std::size_t>(order.q);
  std::vector<double> phi(p, 0.0), theta(q, 0.0);
  if (p + q == 0) return {phi, theta};
  const auto n = static_cast<Eigen::Index>(series.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();

  Eigen::VectorXd y(n);
  for (Eigen::Index t = 0; t < n; ++t)
    y(t) = series.missing[static_cast<std::size_t>(t)] ? nan : series.values[static_cast<std::size_t>(t)];
  auto ols = least_squares(design, y);
  if (!ols) return {phi, theta};
  const Eigen::VectorXd e = y - design * *ols;  // NaN where missing

  Eigen::VectorXd zhat = Eigen::VectorXd::Constant(n, nan);
  if (q > 0) {
    const auto n_eff = static_cast<Eigen::Index>(series.n_effective());
    const Eigen::Index lags =
        std::min<Eigen::Index>(std::max<Eigen::Index>(8, 2 * (order.p + order.q)), n_eff / 4);
    if (lags < 1) return {phi, theta};
    Eigen::MatrixXd a = Eigen::MatrixXd::Constant(n, lags, nan);
    for (Eigen::Index t = lags; t < n; ++t)
      for (Eigen::Index j = 0; j < lags; ++j) a(t, j) = e(t - 1 - j);
    auto ar = least_squares(a, e);
    if (!ar) return {phi, theta};
    zhat = e - a * *ar;
  }

  const auto k = static_cast<Eigen::Index>(p + q);
  Eigen::MatrixXd a = Eigen::MatrixXd::Constant(n, k, nan);
  const auto start = static_cast<Eigen::Index>(std::max(p, q));
  for (Eigen::Index t = start; t < n; ++t) {
    for (std::size_t j = 0; j < p; ++j) a(t, static_cast<Eigen::Index>(j)) = e(t - 1 - static_cast<Eigen::Index>(j));
    for (std::size_t j = 0; j < q; ++j)
      a(t, static_cast<Eigen::Index>(p + j)) = zhat(t - 1 - static_cast<Eigen::Index>(j));
  }
  auto coef = least_squares(a, e);
  if (!coef) return {phi, theta};
  for (std::size_t j = 0; j < p; ++j) phi[j] = (*coef)(static_cast<Eigen::Index>(j));
  for (std::size_t j = 0; j < q; ++j) theta[j] = (*coef)(static_cast<Eigen::Index>(p + j));

  // Keep the start away from the boundary of the admissible region.
  auto inside = [](const std::vector<double>& ar) {
    auto k = ar_to_pacf(ar);
    if (!k) return false;
    return std::all_of(k->begin(), k->end(), [](double v) { return std::abs(v) < 0.95; });
  };
  phi = shrink_until(phi, inside);
  auto neg = [](std::vector<double> v) {
    for (auto& x : v) x = -x;
    return v;
  };
  theta = neg(shrink_until(neg(theta), inside));
  return {phi, theta};
}

template <int N, class F>
double eval_with_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad, F&& fn) {
  using D = Dual<N>;
  std::vector<D> x(static_cast<std::size_t>(u.size()));
  for (Eigen::Index i = 0; i < u.size(); ++i) x[static_cast<std::size_t>(i)] = D::variable(u(i), static_cast<int>(i));
  const D r = fn(x);
  grad.resize(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) grad(i) = r.d[static_cast<std::size_t>(i)];
  return r.v;
}

}  // namespace

// ---------------------------------------------------------------------------

void RegressorMatrix::add_pulse(std::size_t index) {
  const auto n = columns.rows();
  if (static_cast<Eigen::Index>(index) >= n) {
    throw Error(ErrorKind::InvalidArgument, "pulse index outside the series");
  }
  columns.conservativeResize(n, columns.cols() + 1);
  columns.col(columns.cols() - 1).setZero();
  columns(static_cast<Eigen::Index>(index), columns.cols() - 1) = 1.0;
}

std::vector<double> pacf_to_ar(std::span<const double> u) {
  return pacf_to_ar_t(std::vector<double>(u.begin(), u.end()));
}

std::optional<std::vector<double>> ar_to_pacf(std::span<const double> phi) {
  std::vector<double> a(phi.begin(), phi.end());
  std::vector<double> kappa(a.size());
  for (std::size_t k = a.size(); k-- > 0;) {
    const double kk = a[k];
    if (!(std::abs(kk) < 1.0)) return std::nullopt;
    kappa[k] = kk;
    const double denom = 1.0 - kk * kk;
    std::vector<double> prev(k);
    for (std::size_t j = 0; j < k; ++j) prev[j] = (a[j] + kk * a[k - 1 - j]) / denom;
    a.assign(prev.begin(), prev.end());
  }
  return kappa;
}

bool is_stationary(std::span<const double> phi) { return ar_to_pacf(phi).has_value(); }

bool is_invertible(std::span<const double> theta) {
  std::vector<double> neg(theta.begin(), theta.end());
  for (auto& x : neg) x = -x;
  return ar_to_pacf(neg).has_value();
}

double aicc(double loglik, int k, std::size_t n) {
  const double nd = static_cast<double>(n);
  const double kd = static_cast<double>(k);
  if (nd <= kd + 1.0) {
    throw Error(ErrorKind::DegenerateSampleSize,
                "n = " + std::to_string(n) + " <= k + 1 = " + std::to_string(k + 1));
  }
  return -2.0 * loglik + 2.0 * kd + 2.0 * kd * (kd + 1.0) / (nd - kd - 1.0);
}

double ArmaFit::aicc() const { return dropscan::aicc(loglik, order.parameter_count(), n_effective); }

double ArmaFit::beta_se(std::size_t i) const {
  const auto idx = static_cast<Eigen::Index>(1 + phi.size() + theta.size() + i);
  if (idx >= param_cov.rows()) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(std::max(0.0, param_cov(idx, idx)));
}

std::vector<double> ArmaFit::residuals(const DiffSeries& series, const RegressorMatrix& x) const {
  check_dimensions(series, x);
  std::vector<double> out(series.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> beta_full(beta);
  beta_full.resize(x.count(), 0.0);
  const auto ss = make_state_space(phi, theta);
  auto data = [&](std::size_t, std::size_t t) {
    double mu = c;
    for (std::size_t j = 0; j < beta_full.size(); ++j)
      mu += beta_full[j] * x.columns(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(j));
    return series.values[t] - mu;
  };
  auto visit = [&](std::size_t t, double f, const std::vector<double>& v) { out[t] = v[0] / std::sqrt(f); };
  if (!run_filter(ss, series.missing, 1, data, visit, true)) {
    throw Error(ErrorKind::NumericalUnderflow, "filter failed while computing residuals");
  }
  return out;
}

double loglikelihood(const ArmaParams& params, const DiffSeries& series, const RegressorMatrix& x,
                     bool steady_state_filter) {
  check_dimensions(series, x);
  if (params.beta.size() != x.count()) {
    throw Error(ErrorKind::InvalidArgument, "beta has " + std::to_string(params.beta.size()) +
                                                " entries for " + std::to_string(x.count()) + " regressors");
  }
  check_admissible(params.phi, params.theta);
  if (!(params.sigma2 > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma2 must be positive");
  bool ok = false;
  const double ll = full_loglik<double>(params.phi, params.theta, params.c, params.beta, params.sigma2, series,
                                        x.columns, steady_state_filter, &ok);
  if (!ok) throw Error(ErrorKind::NumericalUnderflow, "prediction variance collapsed");
  return ll;
}

Eigen::VectorXd loglikelihood_gradient(const ArmaParams& params, const DiffSeries& series,
                                       const RegressorMatrix& x, bool steady_state_filter) {
  check_dimensions(series, x);
  check_admissible(params.phi, params.theta);
  constexpr int kMaxDims = 32;
  const std::size_t p = params.phi.size(), q = params.theta.size(), r = params.beta.size();
  const std::size_t dims = 1 + p + q + r + 1;
  if (dims > kMaxDims || r != x.count()) {
    throw Error(ErrorKind::InvalidArgument, "gradient supports at most 32 parameters");
  }
  Eigen::VectorXd at(static_cast<Eigen::Index>(dims));
  at(0) = params.c;
  for (std::size_t i = 0; i < p; ++i) at(static_cast<Eigen::Index>(1 + i)) = params.phi[i];
  for (std::size_t i = 0; i < q; ++i) at(static_cast<Eigen::Index>(1 + p + i)) = params.theta[i];
  for (std::size_t i = 0; i < r; ++i) at(static_cast<Eigen::Index>(1 + p + q + i)) = params.beta[i];
  at(static_cast<Eigen::Index>(dims - 1)) = params.sigma2;

  Eigen::VectorXd grad;
  bool ok = false;
  eval_with_gradient<kMaxDims>(at, grad, [&](const std::vector<Dual<kMaxDims>>& v) {
    using D = Dual<kMaxDims>;
    std::vector<D> phi(v.begin() + 1, v.begin() + 1 + static_cast<std::ptrdiff_t>(p));
    std::vector<D> theta(v.begin() + 1 + static_cast<std::ptrdiff_t>(p),
                         v.begin() + 1 + static_cast<std::ptrdiff_t>(p + q));
    std::vector<D> beta(v.begin() + 1 + static_cast<std::ptrdiff_t>(p + q),
                        v.begin() + 1 + static_cast<std::ptrdiff_t>(p + q + r));
    return full_loglik<D>(phi, theta, v[0], beta, v[dims - 1], series, x.columns, steady_state_filter, &ok);
  });
  if (!ok) throw Error(ErrorKind::NumericalUnderflow, "prediction variance collapsed");
  return grad;
}

// ---------------------------------------------------------------------------

ConcentratedObjective::ConcentratedObjective(const DiffSeries& series, const RegressorMatrix& x,
                                             ArmaOrder order, const FitOptions& options)
    : series_(&series), order_(order), options_(options), total_regressors_(x.count()) {
  check_dimensions(series, x);
  n_obs_ = series.n_effective();
  const auto n = static_cast<Eigen::Index>(series.size());
  // Columns with no support on observed rows are unidentified; they stay at 0.
  for (std::size_t j = 0; j < x.count(); ++j) {
    bool support = false;
    for (Eigen::Index t = 0; t < n && !support; ++t) {
      support = !series.missing[static_cast<std::size_t>(t)] && x.columns(t, static_cast<Eigen::Index>(j)) != 0.0;
    }
    if (support) active_.push_back(j);
  }
  design_.resize(n, static_cast<Eigen::Index>(1 + active_.size()));
  design_.col(0).setOnes();
  for (std::size_t j = 0; j < active_.size(); ++j)
    design_.col(static_cast<Eigen::Index>(1 + j)) = x.columns.col(static_cast<Eigen::Index>(active_[j]));

  // Full column rank on the observed rows.
  Eigen::MatrixXd observed(static_cast<Eigen::Index>(n_obs_), design_.cols());
  Eigen::Index row = 0;
  for (Eigen::Index t = 0; t < n; ++t)
    if (!series.missing[static_cast<std::size_t>(t)]) observed.row(row++) = design_.row(t);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(observed);
  if (qr.rank() < observed.cols()) {
    throw Error(ErrorKind::SingularInformation, "regressors are collinear on the observed rows");
  }
}

std::pair<std::vector<double>, std::vector<double>> ConcentratedObjective::unpack(const Eigen::VectorXd& u) const {
  const auto p = static_cast<std::size_t>(order_.p);
  std::vector<double> up(u.data(), u.data() + p);
  std::vector<double> uq(u.data() + p, u.data() + u.size());
  auto phi = pacf_to_ar(up);
  auto theta = pacf_to_ar(uq);
  for (auto& t : theta) t = -t;
  return {phi, theta};
}

Eigen::VectorXd ConcentratedObjective::pack(std::span<const double> phi, std::span<const double> theta) const {
  Eigen::VectorXd u(order_.p + order_.q);
  auto kp = ar_to_pacf(phi);
  std::vector<double> neg(theta.begin(), theta.end());
  for (auto& t : neg) t = -t;
  auto kq = ar_to_pacf(neg);
  if (!kp || !kq) throw Error(ErrorKind::NonStationaryParams, "cannot pack inadmissible parameters");
  for (std::size_t i = 0; i < kp->size(); ++i) u(static_cast<Eigen::Index>(i)) = std::atanh((*kp)[i]);
  for (std::size_t i = 0; i < kq->size(); ++i) u(static_cast<Eigen::Index>(kp->size() + i)) = std::atanh((*kq)[i]);
  return u;
}

double ConcentratedObjective::value(const Eigen::VectorXd& u) const {
  auto [phi, theta] = unpack(u);
  bool ok = false;
  const double ll = concentrated_loglik<double>(phi, theta, *series_, design_, options_.min_innovation_variance,
                                                options_.steady_state_filter, nullptr, nullptr, &ok);
  if (!ok) return std::numeric_limits<double>::infinity();
  return -ll / static_cast<double>(n_obs_);
}

namespace {

template <int N>
double concentrated_value_and_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad, ArmaOrder order,
                                       const DiffSeries& series, const Eigen::MatrixXd& design,
                                       const FitOptions& options, std::size_t n_obs) {
  bool ok = false;
  const double v = eval_with_gradient<N>(u, grad, [&](const std::vector<Dual<N>>& x) {
    const auto p = static_cast<std::ptrdiff_t>(order.p);
    std::vector<Dual<N>> up(x.begin(), x.begin() + p), uq(x.begin() + p, x.end());
    auto phi = pacf_to_ar_t(up);
    auto theta = pacf_to_ar_t(uq);
    for (auto& t : theta) t = -t;
    return concentrated_loglik<Dual<N>>(phi, theta, series, design, options.min_innovation_variance,
                                        options.steady_state_filter, nullptr, nullptr, &ok);
  });
  if (!ok) return std::numeric_limits<double>::infinity();
  const double scale = -1.0 / static_cast<double>(n_obs);
  grad *= scale;
  return v * scale;
}

}  // namespace

double ConcentratedObjective::value_and_gradient(const Eigen::VectorXd& u, Eigen::VectorXd& grad) const {
  const auto dims = u.size();
  if (dims == 0) {
    grad.resize(0);
    return value(u);
  }
  if (dims <= 1) return concentrated_value_and_gradient<1>(u, grad, order_, *series_, design_, options_, n_obs_);
  if (dims <= 2) return concentrated_value_and_gradient<2>(u, grad, order_, *series_, design_, options_, n_obs_);
  if (dims <= 4) return concentrated_value_and_gradient<4>(u, grad, order_, *series_, design_, options_, n_obs_);
  if (dims <= 8) return concentrated_value_and_gradient<8>(u, grad, order_, *series_, design_, options_, n_obs_);
  return concentrated_value_and_gradient<16>(u, grad, order_, *series_, design_, options_, n_obs_);
}

ConcentratedObjective::Profile ConcentratedObjective::profile(const Eigen::VectorXd& u) const {
  auto [phi, theta] = unpack(u);
  bool ok = false;
  std::vector<double> coef;
  Profile out;
  out.loglik = concentrated_loglik<double>(phi, theta, *series_, design_, options_.min_innovation_variance,
                                           options_.steady_state_filter, &coef, &out.sigma2, &ok);
  if (!ok) throw Error(ErrorKind::NumericalUnderflow, "likelihood evaluation failed at the optimum");
  out.c = coef[0];
  out.beta.assign(total_regressors_, 0.0);
  for (std::size_t j = 0; j < active_.size(); ++j) out.beta[active_[j]] = coef[1 + j];
  return out;
}

// ---------------------------------------------------------------------------

ArmaFit fit(const DiffSeries& series, const RegressorMatrix& x, ArmaOrder order, const FitOptions& options) {
  if (!order.valid()) throw Error(ErrorKind::InvalidArgument, "ARMA order outside [0,7]^2");
  check_dimensions(series, x);
  const std::size_t n_eff = series.n_effective();
  const int k = order.parameter_count();
  if (n_eff <= static_cast<std::size_t>(k + 2)) {
    throw Error(ErrorKind::InsufficientData, std::to_string(n_eff) + " observations for k = " + std::to_string(k));
  }

  ConcentratedObjective objective(series, x, order, options);

  ArmaFit out;
  out.order = order;
  out.n_effective = n_eff;

  // Design restricted to identified columns, for the information matrix.
  std::vector<std::size_t> active;
  {
    const auto n = static_cast<Eigen::Index>(series.size());
    for (std::size_t j = 0; j < x.count(); ++j) {
      for (Eigen::Index t = 0; t < n; ++t) {
        if (!series.missing[static_cast<std::size_t>(t)] && x.columns(t, static_cast<Eigen::Index>(j)) != 0.0) {
          active.push_back(j);
          break;
        }
      }
    }
  }
  Eigen::MatrixXd design(x.columns.rows(), static_cast<Eigen::Index>(1 + active.size()));
  design.col(0).setOnes();
  for (std::size_t j = 0; j < active.size(); ++j)
    design.col(static_cast<Eigen::Index>(1 + j)) = x.columns.col(static_cast<Eigen::Index>(active[j]));

  if (options.min_innovation_variance <= 0.0) {
    // An exactly explained series has no finite maximum.
    Eigen::VectorXd y(static_cast<Eigen::Index>(series.size()));
    double scale = 1.0;
    for (std::size_t t = 0; t < series.size(); ++t) {
      y(static_cast<Eigen::Index>(t)) =
          series.missing[t] ? std::numeric_limits<double>::quiet_NaN() : series.values[t];
      if (!series.missing[t]) scale += series.values[t] * series.values[t];
    }
    if (auto coef = least_squares(design, y)) {
      double rss = 0.0;
      for (Eigen::Index t = 0; t < y.size(); ++t) {
        if (std::isfinite(y(t))) {
          const double r = y(t) - design.row(t).dot(*coef);
          rss += r * r;
        }
      }
      if (rss <= 1e-20 * scale) {
        throw Error(ErrorKind::SingularInformation, "series is exactly explained by the regressors");
      }
    }
  }

  auto [phi0, theta0] = initial_arma(series, design, order);
  Eigen::VectorXd u0 = objective.pack(phi0, theta0);

  BfgsOptions bfgs;
  bfgs.max_iterations = options.max_iterations;
  bfgs.gradient_tolerance = options.gradient_tolerance;
  auto fg = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    if (grad) return objective.value_and_gradient(u, *grad);
    return objective.value(u);
  };
  BfgsResult opt = minimize_bfgs(fg, u0, bfgs);
  if (!std::isfinite(opt.value)) {
    throw Error(ErrorKind::NumericalUnderflow, "likelihood is not finite at the starting point");
  }

  auto [phi, theta] = objective.unpack(opt.x);
  const auto prof = objective.profile(opt.x);
  out.phi = phi;
  out.theta = theta;
  out.c = prof.c;
  out.beta = prof.beta;
  out.sigma2 = prof.sigma2;
  out.loglik = prof.loglik;
  out.converged = opt.converged;
  out.iterations = opt.iterations;
  out.gradient_norm = opt.gradient_norm;

  if (!options.compute_covariance) return out;

  // Observed information of the sigma2-profiled likelihood over
  // (c, phi, theta, beta_active), by central differences.
  const auto p = static_cast<std::size_t>(order.p), q = static_cast<std::size_t>(order.q);
  const std::size_t d = 1 + p + q + active.size();
  Eigen::VectorXd nat(static_cast<Eigen::Index>(d));
  nat(0) = out.c;
  for (std::size_t i = 0; i < p; ++i) nat(static_cast<Eigen::Index>(1 + i)) = phi[i];
  for (std::size_t i = 0; i < q; ++i) nat(static_cast<Eigen::Index>(1 + p + i)) = theta[i];
  Eigen::MatrixXd design_active = design.rightCols(static_cast<Eigen::Index>(active.size()));
  for (std::size_t j = 0; j < active.size(); ++j) nat(static_cast<Eigen::Index>(1 + p + q + j)) = out.beta[active[j]];

  auto ell = [&](const Eigen::VectorXd& v) {
    return profile_loglik_natural(v, order, series, design_active, options.min_innovation_variance,
                                  options.steady_state_filter);
  };
  Eigen::VectorXd h(static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = 1e-4 * std::max(1.0, std::abs(nat(i)));
  for (std::size_t i = 0; i < p + q; ++i) h(static_cast<Eigen::Index>(1 + i)) = 1e-5;

  // Covariance over the coordinates in `idx` (others held at the optimum);
  // nullopt when the stencil leaves the admissible region or the observed
  // information is not positive definite.
  auto covariance = [&](const std::vector<Eigen::Index>& idx) -> std::optional<Eigen::MatrixXd> {
    const auto k = static_cast<Eigen::Index>(idx.size());
    const double f0 = ell(nat);
    if (!std::isfinite(f0)) return std::nullopt;
    Eigen::MatrixXd hess(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      const Eigen::Index i = idx[static_cast<std::size_t>(a)];
      Eigen::VectorXd xp = nat, xm = nat;
      xp(i) += h(i);
      xm(i) -= h(i);
      const double fp = ell(xp), fm = ell(xm);
      if (!std::isfinite(fp) || !std::isfinite(fm)) return std::nullopt;
      hess(a, a) = (fp - 2.0 * f0 + fm) / (h(i) * h(i));
      for (Eigen::Index b = 0; b < a; ++b) {
        const Eigen::Index j = idx[static_cast<std::size_t>(b)];
        Eigen::VectorXd pp = nat, pm = nat, mp = nat, mm = nat;
        pp(i) += h(i), pp(j) += h(j);
        pm(i) += h(i), pm(j) -= h(j);
        mp(i) -= h(i), mp(j) += h(j);
        mm(i) -= h(i), mm(j) -= h(j);
        const double v = ell(pp) - ell(pm) - ell(mp) + ell(mm);
        if (!std::isfinite(v)) return std::nullopt;
        hess(a, b) = hess(b, a) = v / (4.0 * h(i) * h(j));
      }
    }
    const Eigen::MatrixXd info = -hess;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() != Eigen::Success) return std::nullopt;
    Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(k, k));
    if (!cov.allFinite()) return std::nullopt;
    return cov;
  };

  std::vector<Eigen::Index> all(d);
  for (std::size_t i = 0; i < d; ++i) all[i] = static_cast<Eigen::Index>(i);
  std::vector<Eigen::Index> used = all;
  auto cov_opt = covariance(all);
  if (!cov_opt && p + q > 0) {
    used = {0};
    for (std::size_t j = 0; j < active.size(); ++j) used.push_back(static_cast<Eigen::Index>(1 + p + q + j));
    cov_opt = covariance(used);
    out.cov_conditional = cov_opt.has_value();
  }
  if (!cov_opt) throw Error(ErrorKind::SingularInformation, "observed information is not positive definite");
  Eigen::MatrixXd cov_active = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t a = 0; a < used.size(); ++a)
    for (std::size_t b = 0; b < used.size(); ++b)
      cov_active(used[a], used[b]) = (*cov_opt)(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));

  const std::size_t full = 1 + p + q + x.count();
  out.param_cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(full), static_cast<Eigen::Index>(full));
  std::vector<std::size_t> map(d);
  for (std::size_t i = 0; i < 1 + p + q; ++i) map[i] = i;
  for (std::size_t j = 0; j < active.size(); ++j) map[1 + p + q + j] = 1 + p + q + active[j];
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j)
      out.param_cov(static_cast<Eigen::Index>(map[i]), static_cast<Eigen::Index>(map[j])) =
          cov_active(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return out;
}

// ---------------------------------------------------------------------------

OrderSelection select_order_detailed(const DiffSeries& base_series, const SelectOptions& options) {
  const int np = options.max_p + 1, nq = options.max_q + 1;
  OrderSelection out;
  out.scores.resize(static_cast<std::size_t>(np * nq));
  const auto x = RegressorMatrix::empty(base_series.size());
  FitOptions fopts = options.fit;
  fopts.compute_covariance = false;

  auto evaluate = [&](std::size_t idx) {
    const ArmaOrder order{static_cast<int>(idx) / nq, static_cast<int>(idx) % nq};
    OrderScore score;
    score.order = order;
    try {
      const ArmaFit f = fit(base_series, x, order, fopts);
      if (f.converged) {
        score.loglik = f.loglik;
        score.aicc = aicc(f.loglik, order.parameter_count(), f.n_effective);
        score.usable = std::isfinite(score.aicc);
      }
    } catch (const Error&) {
      score.usable = false;
    }
    out.scores[idx] = score;
  };

  const std::size_t total = out.scores.size();
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(total)));
  if (threads == 1) {
    for (std::size_t i = 0; i < total; ++i) evaluate(i);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < total; i += threads) evaluate(i);
      });
    }
  }

  const OrderScore* best = nullptr;
  for (const auto& s : out.scores) {
    if (!s.usable) continue;
    if (!best) {
      best = &s;
      continue;
    }
    const int sum = s.order.p + s.order.q, best_sum = best->order.p + best->order.q;
    if (s.aicc < best->aicc ||
        (s.aicc == best->aicc && (sum < best_sum || (sum == best_sum && s.order.p < best->order.p)))) {
      best = &s;
    }
  }
  if (!best) throw Error(ErrorKind::NoConvergedModel, "no (p, q) candidate converged");
  out.best = best->order;
  return out;
}

ArmaOrder select_order(const DiffSeries& base_series, const SelectOptions& options) {
  return select_order_detailed(base_series, options).best;
}

DiffSeries simulate_arma(ArmaOrder order, double c, std::span<const double> phi, std::span<const double> theta,
                         double sigma2, std::size_t n, std::uint64_t seed) {
  if (phi.size() != static_cast<std::size_t>(order.p) || theta.size() != static_cast<std::size_t>(order.q)) {
    throw Error(ErrorKind::InvalidArgument, "coefficient counts do not match the order");
  }
  if (!is_stationary(phi)) throw Error(ErrorKind::NonStationaryParams, "AR polynomial is not stationary");
  if (sigma2 < 0.0) throw Error(ErrorKind::InvalidArgument, "sigma2 must be non-negative");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(sigma2);
  const std::size_t burn = 10 * static_cast<std::size_t>(std::max(order.p, order.q)) + 50;
  const std::size_t total = burn + n;
  std::vector<double> e(total, 0.0), z(total, 0.0);
  for (std::size_t t = 0; t < total; ++t) {
    z[t] = sd * normal(rng);
    double v = z[t];
    for (std::size_t i = 0; i < phi.size() && i < t; ++i) v += phi[i] * e[t - 1 - i];
    for (std::size_t i = 0; i < theta.size() && i < t; ++i) v += theta[i] * z[t - 1 - i];
    e[t] = v;
  }
  DiffSeries out;
  out.values.resize(n);
  out.missing.assign(n, false);
  for (std::size_t t = 0; t < n; ++t) out.values[t] = c + e[burn + t];
  return out;
}

}  // namespace dropscan
