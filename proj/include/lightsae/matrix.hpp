#ifndef LIGHTSAE_MATRIX_HPP_
#define LIGHTSAE_MATRIX_HPP_

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>

namespace lightsae {

// Row-major dense storage, matching the on-disk CSV/JSON layouts.
template<typename Scalar>
using DenseT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Dense = DenseT<double>;

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

template<typename Derived>
std::string shape_string(const Eigen::MatrixBase<Derived>& m)
{
  return shape_string(m.rows(), m.cols());
}

// A trainable (or frozen) value together with its gradient accumulator.
// grad is allocated lazily by the tape and always has the shape of data.
struct Matrix {
  Dense data;
  bool requires_grad = false;
  std::optional<Dense> grad;

  Matrix() = default;
  explicit Matrix(Dense value, bool trainable = false) : data(std::move(value)), requires_grad(trainable) {}

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index cols() const { return data.cols(); }
  Eigen::Index size() const { return data.size(); }

  void zero_grad() { grad.reset(); }

  // Adds g into the accumulator, allocating it on first use.
  void accumulate(const Dense& g);
};

}  // namespace lightsae

#endif  // LIGHTSAE_MATRIX_HPP_
