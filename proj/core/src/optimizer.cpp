#include "dropscan/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace dropscan {

BfgsResult minimize_bfgs(const Objective& objective, Eigen::VectorXd x0,
                         const BfgsOptions& options) {
  const Eigen::Index n = x0.size();
  BfgsResult out;
  out.x = std::move(x0);

  Eigen::VectorXd g(n);
  double f = objective(out.x, &g);
  out.value = f;
  if (!std::isfinite(f) || !g.allFinite()) return out;
  out.gradient_norm = g.norm();
  if (n == 0 || out.gradient_norm < options.gradient_tolerance) {
    out.converged = true;
    return out;
  }

  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(n, n);
  bool fresh = true;
  Eigen::VectorXd g_new(n);
  // Creeping along a flat ridge (typically towards the boundary of the
  // parameter space) will not reach the gradient tolerance; the objective is
  // then only moving by rounding noise.
  std::vector<double> history{f};
  const auto window = static_cast<std::size_t>(std::max(0, options.stall_iterations));
  auto stalled = [&] {
    history.push_back(f);
    return window > 0 && history.size() > window &&
           history[history.size() - 1 - window] - f <= options.stall_tolerance * (1.0 + std::abs(f));
  };

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    out.iterations = iter + 1;
    Eigen::VectorXd dir = -h * g;
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      h.setIdentity();
      fresh = true;
      dir = -g;
      slope = -g.squaredNorm();
    }

    // First step from an identity approximation is capped to a unit move.
    double step = 1.0;
    if (fresh) step = std::min(1.0, 1.0 / dir.norm());

    constexpr double kArmijo = 1e-4;
    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      // Trial points only need the value; the gradient is taken once a step
      // is accepted.
      x_new = out.x + step * dir;
      f_new = objective(x_new, nullptr);
      if (std::isfinite(f_new) && f_new <= f + kArmijo * step * slope) {
        f_new = objective(x_new, &g_new);
        if (std::isfinite(f_new) && g_new.allFinite()) {
          accepted = true;
          break;
        }
      }
      step *= std::isfinite(f_new) ? 0.5 : 0.1;
    }

    if (!accepted) {
      if (fresh) break;  // even steepest descent cannot make progress
      h.setIdentity();
      fresh = true;
      if (stalled()) return out;
      continue;
    }

    const Eigen::VectorXd s = x_new - out.x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh) {
        h *= sy / y.squaredNorm();
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = h * y;
      h += (rho * rho * y.dot(hy) + rho) * (s * s.transpose()) -
           rho * (hy * s.transpose() + s * hy.transpose());
      fresh = false;
    }

    out.x = x_new;
    f = f_new;
    g = g_new;
    out.value = f;
    out.gradient_norm = g.norm();
    if (out.gradient_norm < options.gradient_tolerance) {
      out.converged = true;
      return out;
    }

    if (stalled()) return out;
  }
  return out;
}

}  // namespace dropscan
