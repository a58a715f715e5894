#pragma once

#include <functional>
#include <vector>

#include <Eigen/Core>

namespace nuc {

using LinearMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct LsqrResult {
  Eigen::VectorXd x;
  int iterations = 0;
  double initial_residual = 0.0;  // ||b - A x0||
  double residual = 0.0;          // ||b - A x|| estimate
};

// Paige-Saunders LSQR for min ||A x - b||, warm-started at x0. Only products
// with A and A^T are needed. Stops after max_iterations or once the
// normal-equation residual estimate falls below rel_tol times its initial value.
LsqrResult lsqr(const LinearMap& apply, const LinearMap& apply_adjoint, const Eigen::VectorXd& b,
                const Eigen::VectorXd& x0, int max_iterations, double rel_tol = 1e-14);

}  // namespace nuc
