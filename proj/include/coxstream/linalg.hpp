#pragma once

#include <Eigen/Dense>
#include <string>

#include "coxstream/errors.hpp"

namespace coxstream {

/// Relative eigenvalue cutoff under which a symmetric matrix is treated as
/// rank-deficient.
inline constexpr double kRankEps = 1e-12;

struct QuadForm {
  double value = 0.0;
  int rank = 0;
  bool used_pinv = false;
};

/// q' H^+ q for symmetric PSD H. Eigenvalues below kRankEps * max eigenvalue
/// count as zero; rank and a pseudo-inverse flag are reported so callers can
/// reduce degrees of freedom on collinear designs.
inline QuadForm pinv_quadratic_form(const Eigen::MatrixXd& h,
                                    const Eigen::VectorXd& q) {
  if (h.rows() != h.cols() || h.rows() != q.size())
    throw invalid_input_error("pinv_quadratic_form: dimension mismatch");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  if (es.info() != Eigen::Success)
    throw singular_matrix_error("pinv_quadratic_form: eigendecomposition failed");
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double lam_max = lam.size() ? lam.maxCoeff() : 0.0;
  const double cut = kRankEps * std::max(lam_max, 0.0);
  QuadForm out;
  for (int i = 0; i < lam.size(); ++i) {
    if (lam[i] > cut && lam[i] > 0.0) {
      const double proj = es.eigenvectors().col(i).dot(q);
      out.value += proj * proj / lam[i];
      ++out.rank;
    }
  }
  out.used_pinv = out.rank < h.rows();
  return out;
}

/// Pseudo-inverse of a symmetric PSD matrix under the same cutoff policy.
inline Eigen::MatrixXd sym_pinv(const Eigen::MatrixXd& h, bool* deficient = nullptr) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
  if (es.info() != Eigen::Success)
    throw singular_matrix_error("sym_pinv: eigendecomposition failed");
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double lam_max = lam.size() ? lam.maxCoeff() : 0.0;
  const double cut = kRankEps * std::max(lam_max, 0.0);
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(lam.size());
  int rank = 0;
  for (int i = 0; i < lam.size(); ++i) {
    if (lam[i] > cut && lam[i] > 0.0) {
      inv[i] = 1.0 / lam[i];
      ++rank;
    }
  }
  if (deficient) *deficient = rank < h.rows();
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

/// True when the smallest eigenvalue falls under the rank cutoff.
inline bool sym_is_singular(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double lam_max = lam.size() ? lam.maxCoeff() : 0.0;
  return !(lam.minCoeff() > kRankEps * std::max(lam_max, 0.0) &&
           lam.minCoeff() > 0.0);
}

/// Solve a x = b for symmetric positive definite a; throws on singularity.
inline Eigen::VectorXd spd_solve(const Eigen::MatrixXd& a,
                                 const Eigen::VectorXd& b,
                                 const std::string& context) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success)
    throw singular_matrix_error(context + ": eigendecomposition failed");
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double lam_max = lam.size() ? lam.maxCoeff() : 0.0;
  if (!(lam.minCoeff() > kRankEps * std::max(lam_max, 0.0) && lam.minCoeff() > 0.0))
    throw singular_matrix_error(context + ": matrix is singular");
  return es.eigenvectors() *
         (es.eigenvectors().transpose() * b).cwiseQuotient(lam);
}

/// Inverse of a symmetric positive definite matrix; throws on singularity.
inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& a,
                                   const std::string& context) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  if (es.info() != Eigen::Success)
    throw singular_matrix_error(context + ": eigendecomposition failed");
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double lam_max = lam.size() ? lam.maxCoeff() : 0.0;
  if (!(lam.minCoeff() > kRankEps * std::max(lam_max, 0.0) && lam.minCoeff() > 0.0))
    throw singular_matrix_error(context + ": matrix is singular");
  return es.eigenvectors() * lam.cwiseInverse().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace coxstream
