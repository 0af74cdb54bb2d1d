#ifndef LIGHTSAE_SVD_HPP_
#define LIGHTSAE_SVD_HPP_

#include "lightsae/error.hpp"
#include "lightsae/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace lightsae {

/// Singular values of a dense matrix in descending order.
///
/// One-sided (Hestenes) Jacobi: plane rotations are applied to the columns of
/// the thinner orientation until every column pair is orthogonal, which is the
/// Jacobi eigen-iteration on the Gram matrix without ever forming it. The
/// column norms are then the singular values. Working on the columns directly
/// keeps tiny singular values accurate down to roundoff of the matrix itself
/// rather than of its square, which rank counting relies on.
template<typename Derived>
std::vector<typename Derived::Scalar> svd_values(const Eigen::MatrixBase<Derived>& a, int max_sweeps = 60)
{
  using Scalar = typename Derived::Scalar;
  using Work = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;  // column-major: rotations touch columns

  if (a.rows() < 1 || a.cols() < 1)
    throw ContractError("svd_values: empty matrix " + shape_string(a.rows(), a.cols()));
  if (!a.allFinite())
    throw ContractError("svd_values: matrix " + shape_string(a.rows(), a.cols()) + " has non-finite entries");

  Work u = a.rows() >= a.cols() ? Work(a) : Work(a.transpose());
  const Eigen::Index n = u.cols();
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar alpha = u.col(p).squaredNorm();
        const Scalar beta = u.col(q).squaredNorm();
        const Scalar gamma = u.col(p).dot(u.col(q));
        if (alpha == Scalar(0) || beta == Scalar(0))
          continue;
        if (std::abs(gamma) <= eps * std::sqrt(alpha * beta))
          continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) / (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Eigen::Index r = 0; r < u.rows(); ++r) {
          const Scalar up = u(r, p);
          const Scalar uq = u(r, q);
          u(r, p) = c * up - s * uq;
          u(r, q) = s * up + c * uq;
        }
      }
    }
    if (!rotated)
      break;
  }

  std::vector<Scalar> sigma(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j)
    sigma[static_cast<std::size_t>(j)] = u.col(j).norm();
  std::sort(sigma.begin(), sigma.end(), std::greater<Scalar>());
  return sigma;
}

/// Number of singular values strictly above tol.
template<typename Derived>
Eigen::Index numerical_rank(const Eigen::MatrixBase<Derived>& a, typename Derived::Scalar tol)
{
  const auto sigma = svd_values(a);
  return static_cast<Eigen::Index>(std::count_if(sigma.begin(), sigma.end(), [tol](auto s) { return s > tol; }));
}

}  // namespace lightsae

#endif  // LIGHTSAE_SVD_HPP_
