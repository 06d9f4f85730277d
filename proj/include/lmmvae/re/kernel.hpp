#pragma once

#include "lmmvae/nn/matrix.hpp"
#include "lmmvae/nn/rng.hpp"
#include "lmmvae/re/design.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace lmmvae::re {

/// k(s, s') = exp(-|s - s'|^2 / (2 l^2)) over the rows of a q x 2 table.
inline Matrix rbf_kernel(const Matrix& locations, double length_scale_sq) {
  if (!(length_scale_sq > 0.0)) throw std::invalid_argument("rbf_kernel: length_scale_sq must be > 0");
  const Index q = locations.rows();
  Matrix k(q, q);
  for (Index i = 0; i < q; ++i) {
    k(i, i) = 1.0;
    for (Index j = 0; j < i; ++j) {
      const double d2 = (locations.row(i) - locations.row(j)).squaredNorm();
      k(i, j) = k(j, i) = std::exp(-d2 / (2.0 * length_scale_sq));
    }
  }
  return k;
}

/// Jitter added to the diagonal before giving up on a Cholesky factor.
inline constexpr std::array<double, 6> kJitterLadder = {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6};

/// Lower-triangular L with L L^T = A + jitter I for the smallest ladder
/// jitter that factors.
inline Matrix jitter_cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("jitter_cholesky: matrix must be square");
  const Matrix sym = 0.5 * (a + a.transpose());
  for (double jitter : kJitterLadder) {
    Eigen::LLT<Matrix> llt(sym + jitter * Matrix::Identity(a.rows(), a.cols()));
    if (llt.info() == Eigen::Success) {
      Matrix l = llt.matrixL();
      if (l.allFinite()) return l;
    }
  }
  throw SingularityError("Cholesky factorization failed after jitter " + std::to_string(kJitterLadder.back()));
}

/// Any F with F F^T = A for symmetric PSD A (tolerates rank deficiency).
/// Negative eigenvalues from round-off are clipped to zero.
inline Matrix psd_factor(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw SingularityError("psd_factor: eigendecomposition failed");
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

/// Nearest PSD matrix in Frobenius norm: eigenvalues clipped at zero.
inline Matrix project_psd(const Matrix& a) {
  const Matrix f = psd_factor(a);
  return f * f.transpose();
}

inline double min_eigenvalue(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

/// Posterior covariance of spatial random effects given the rows in `z_rows`:
///   Psi = K - K Z^T V^{-1} Z K,   V = Z K Z^T + noise_var I.
/// Evaluated in q-space through Z^T V^{-1} Z = (noise_var I + N K)^{-1} N with
/// N = Z^T Z, which avoids forming the n x n matrix V.
inline Matrix spatial_posterior_cov(const Matrix& kernel, const SparseIndicator& z_rows, double noise_var) {
  if (!(noise_var > 0.0)) throw std::invalid_argument("spatial_posterior_cov: noise_var must be > 0");
  const Index q = kernel.rows();
  if (kernel.cols() != q || z_rows.num_cols != q) throw ShapeError("spatial_posterior_cov: Z and K disagree on q");

  Matrix n_mat = Matrix::Zero(q, q);
  bool diagonal = true;
  for (const auto& row : z_rows.entries) {
    for (const auto& [a, va] : row)
      for (const auto& [b, vb] : row) {
        n_mat(a, b) += va * vb;
        if (a != b) diagonal = false;
      }
  }

  Matrix psi;
  if (diagonal) {
    // With S = N^{1/2}: K S (noise I + S K S)^{-1} S K, an SPD solve.
    const Vector s = n_mat.diagonal().cwiseSqrt();
    Matrix m = s.asDiagonal() * kernel * s.asDiagonal();
    m.diagonal().array() += noise_var;
    const Matrix sk = s.asDiagonal() * kernel;
    Eigen::LDLT<Matrix> ldlt(0.5 * (m + m.transpose()));
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw SingularityError("spatial_posterior_cov: marginal covariance not SPD");
    psi = kernel - sk.transpose() * ldlt.solve(sk);
  } else {
    Matrix a = n_mat * kernel;
    a.diagonal().array() += noise_var;
    psi = kernel - kernel * a.partialPivLu().solve(n_mat * kernel);
  }
  return 0.5 * (psi + psi.transpose());
}

/// Cholesky factor L of the spatial posterior covariance, L L^T = Psi
/// (jitter-stabilized).
inline Matrix spatial_posterior_chol(const Matrix& kernel, const SparseIndicator& z_rows, double noise_var) {
  return jitter_cholesky(spatial_posterior_cov(kernel, z_rows, noise_var));
}

/// Same, computed on `n_samp` rows drawn uniformly without replacement
/// (all rows when n_samp >= n).
inline Matrix spatial_posterior_chol(const Matrix& kernel, const SparseIndicator& z, double noise_var,
                                     std::size_t n_samp, Rng& rng) {
  const auto n = static_cast<std::size_t>(z.n);
  if (n_samp >= n) return spatial_posterior_chol(kernel, z, noise_var);
  SparseIndicator sub;
  sub.num_cols = z.num_cols;
  for (auto i : rng.sample_without_replacement(n, n_samp)) sub.entries.push_back(z.entries[i]);
  sub.n = static_cast<Index>(sub.entries.size());
  return spatial_posterior_chol(kernel, sub, noise_var);
}

/// B = L G diag(sqrt(col_vars)), G i.i.d. N(0, 1): a draw from
/// MN(0, L L^T, diag(col_vars)).
inline Matrix sample_matrix_normal(Rng& rng, const Matrix& row_factor, const Vector& col_vars) {
  if (row_factor.rows() != row_factor.cols()) throw ShapeError("sample_matrix_normal: row factor must be square");
  if ((col_vars.array() < 0.0).any()) throw std::invalid_argument("sample_matrix_normal: negative column variance");
  const Matrix g = rng.normal_matrix(row_factor.rows(), col_vars.size());
  return row_factor * g * col_vars.cwiseSqrt().asDiagonal();
}

/// Identity row covariance: rows i.i.d. N(0, diag(col_vars)).
inline Matrix sample_matrix_normal(Rng& rng, Index rows, const Vector& col_vars) {
  if ((col_vars.array() < 0.0).any()) throw std::invalid_argument("sample_matrix_normal: negative column variance");
  return rng.normal_matrix(rows, col_vars.size()) * col_vars.cwiseSqrt().asDiagonal();
}

}  // namespace lmmvae::re
