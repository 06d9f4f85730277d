#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace lmmvae {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

/// Thrown when operand dimensions do not line up.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a covariance factorization fails even after jitter.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when training produces a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int epoch)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

inline std::string shape_str(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

inline void require_shape(const Matrix& m, Index rows, Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + shape_str(rows, cols) + ", got " +
                     shape_str(m.rows(), m.cols()));
  }
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  require_shape(b, a.rows(), a.cols(), what);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Rows of `m` selected by `idx`, in the given order.
template <typename IndexRange>
Matrix gather_rows(const Matrix& m, const IndexRange& idx) {
  Matrix out(static_cast<Index>(std::size(idx)), m.cols());
  Index r = 0;
  for (auto i : idx) out.row(r++) = m.row(static_cast<Index>(i));
  return out;
}

}  // namespace lmmvae
