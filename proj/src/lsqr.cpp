#include "nuc/lsqr.hpp"

#include <cmath>

namespace nuc {

LsqrResult lsqr(const LinearMap& apply, const LinearMap& apply_adjoint, const Eigen::VectorXd& b,
                const Eigen::VectorXd& x0, int max_iterations, double rel_tol) {
  LsqrResult res;
  res.x = x0;
  Eigen::VectorXd u = b - apply(x0);
  double beta = u.norm();
  res.initial_residual = beta;
  res.residual = beta;
  if (beta == 0.0) return res;
  u /= beta;
  Eigen::VectorXd v = apply_adjoint(u);
  double alpha = v.norm();
  if (alpha == 0.0) return res;
  v /= alpha;

  Eigen::VectorXd w = v;
  Eigen::VectorXd dx = Eigen::VectorXd::Zero(x0.size());
  double phibar = beta;
  double rhobar = alpha;
  const double normal0 = alpha * beta;

  for (int it = 0; it < max_iterations; ++it) {
    u = apply(v) - alpha * u;
    beta = u.norm();
    if (beta > 0.0) u /= beta;
    v = apply_adjoint(u) - beta * v;
    alpha = v.norm();
    if (alpha > 0.0) v /= alpha;

    const double rho = std::hypot(rhobar, beta);
    const double c = rhobar / rho;
    const double s = beta / rho;
    const double theta = s * alpha;
    rhobar = -c * alpha;
    const double phi = c * phibar;
    phibar = s * phibar;

    dx += (phi / rho) * w;
    w = v - (theta / rho) * w;
    res.iterations = it + 1;
    res.residual = phibar;

    const double normal = phibar * alpha * std::abs(c);
    if (alpha == 0.0 || beta == 0.0 || normal <= rel_tol * normal0) break;
  }
  res.x = x0 + dx;
  return res;
}

}  // namespace nuc
