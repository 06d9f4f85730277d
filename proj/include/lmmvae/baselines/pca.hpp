#pragma once

#include "lmmvae/nn/matrix.hpp"

#include <stdexcept>
#include <string>

namespace lmmvae::baselines {

struct PcaModel {
  RowVector mean;  // 1 x p
  Matrix loadings;  // p x d, orthonormal columns
  Vector eigenvalues;  // all p eigenvalues of the (1/n) covariance, descending
};

/// Top-d eigenvectors of the centered covariance (normalized by n). Each
/// loading column is signed so its largest-magnitude entry is positive.
inline PcaModel pca_fit(const Matrix& x, Index d) {
  if (d < 1 || d > x.cols()) throw std::invalid_argument("pca_fit: need 1 <= d <= p, got d = " + std::to_string(d));
  if (x.rows() < 2) throw std::invalid_argument("pca_fit: need at least 2 rows");
  PcaModel m;
  m.mean = x.colwise().mean();
  const Matrix centered = x.rowwise() - m.mean;
  const Matrix cov = (centered.transpose() * centered) / static_cast<double>(x.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("pca_fit: eigendecomposition failed");
  m.eigenvalues = es.eigenvalues().reverse();
  m.loadings = es.eigenvectors().rightCols(d).rowwise().reverse();
  for (Index j = 0; j < d; ++j) {
    Index arg = 0;
    m.loadings.col(j).cwiseAbs().maxCoeff(&arg);
    if (m.loadings(arg, j) < 0.0) m.loadings.col(j) *= -1.0;
  }
  return m;
}

struct PcaOutput {
  Matrix latent;  // (X - mu) W
  Matrix x_hat;   // latent W^T + mu
};

inline PcaOutput pca_transform_reconstruct(const PcaModel& m, const Matrix& x) {
  if (x.cols() != m.mean.cols()) throw ShapeError("pca_transform_reconstruct: feature count differs from model");
  PcaOutput out;
  out.latent = (x.rowwise() - m.mean) * m.loadings;
  out.x_hat = (out.latent * m.loadings.transpose()).rowwise() + m.mean;
  return out;
}

}  // namespace lmmvae::baselines
