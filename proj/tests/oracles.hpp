#pragma once

// Test-only numerical oracles: central finite differences, dense Jacobians,
// composite quadrature. Kept independent of the library's analytic paths so
// they can act as ground truth.

#include "aef/types.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using aef::Index;
using aef::Matrix;
using aef::Vector;

/// Central finite-difference gradient of a scalar function of a vector.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f,
                          const Vector& x, double h_scale = 1e-5) {
  Vector g(x.size());
  Vector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double h = h_scale * (1.0 + std::abs(x[i]));
    const double xi = x[i];
    xp[i] = xi + h;
    const double fp = f(xp);
    xp[i] = xi - h;
    const double fm = f(xp);
    xp[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// Dense central finite-difference Jacobian of a vector-valued map.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f,
                          const Vector& x, double h_scale = 1e-6) {
  const Vector f0 = f(x);
  Matrix J(f0.size(), x.size());
  Vector xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double h = h_scale * (1.0 + std::abs(x[i]));
    const double xi = x[i];
    xp[i] = xi + h;
    const Vector fp = f(xp);
    xp[i] = xi - h;
    const Vector fm = f(xp);
    xp[i] = xi;
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

/// log|det J| of a square map at x via dense finite differences.
inline double fd_logabsdet(const std::function<Vector(const Vector&)>& f,
                           const Vector& x, double h_scale = 1e-6) {
  Matrix J = fd_jacobian(f, x, h_scale);
  Eigen::PartialPivLU<Matrix> lu(J);
  double logdet = 0.0;
  const auto& U = lu.matrixLU();
  for (Index i = 0; i < U.rows(); ++i) logdet += std::log(std::abs(U(i, i)));
  return logdet;
}

/// Composite Simpson quadrature on [a, b] with n panels (n even).
inline double simpson(const std::function<double(double)>& f, double a,
                      double b, int n = 512) {
  if (n % 2 != 0) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// Tensorized 2-D Simpson quadrature on [ax, bx] x [ay, by].
inline double simpson2d(const std::function<double(double, double)>& f,
                        double ax, double bx, double ay, double by,
                        int n = 256) {
  return simpson(
      [&](double x) {
        return simpson([&](double y) { return f(x, y); }, ay, by, n);
      },
      ax, bx, n);
}

/// Relative agreement check with a unit floor: |a-b| <= tol * (1 + |a|).
inline bool close_rel(double a, double b, double tol) {
  return std::abs(a - b) <= tol * (1.0 + std::abs(a));
}

}  // namespace oracle
