#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace gsr {

/// Self-adaptive dictionary of one group: the SVD X = U diag(s) V^T.
/// Atom i is the rank-one matrix left.col(i) * right.col(i)^T; atoms are
/// orthonormal under the Frobenius inner product.
template <typename Scalar>
struct GroupDictionaryT {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Matrix left;       // B_s x m
  Matrix right;      // c x m
  Vector singulars;  // m, non-increasing, >= 0

  Eigen::Index atoms() const { return singulars.size(); }
};

template <typename Scalar>
using SparseCodeT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using GroupDictionary = GroupDictionaryT<double>;
using SparseCode = SparseCodeT<double>;

enum class Thresholding { hard, soft };

/// Thin SVD of the group with a deterministic sign: in each pair (u_i, v_i)
/// the largest-magnitude entry of u_i (first on ties) is made non-negative.
template <typename Derived>
GroupDictionaryT<typename Derived::Scalar> learn_dictionary(const Eigen::MatrixBase<Derived>& group) {
  using Scalar = typename Derived::Scalar;
  if (!group.allFinite()) throw std::invalid_argument("learn_dictionary: non-finite group entry");

  GroupDictionaryT<Scalar> dict;
  const Eigen::Index m = std::min(group.rows(), group.cols());
  if (group.squaredNorm() == Scalar(0)) {
    // The SVD routine returns arbitrary bases here; any orthonormal pair is valid.
    dict.left = GroupDictionaryT<Scalar>::Matrix::Identity(group.rows(), m);
    dict.right = GroupDictionaryT<Scalar>::Matrix::Identity(group.cols(), m);
    dict.singulars = GroupDictionaryT<Scalar>::Vector::Zero(m);
    return dict;
  }

  Eigen::BDCSVD<typename GroupDictionaryT<Scalar>::Matrix> svd(group, Eigen::ComputeThinU | Eigen::ComputeThinV);
  dict.left = svd.matrixU();
  dict.right = svd.matrixV();
  dict.singulars = svd.singularValues();

  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Index pivot = 0;
    dict.left.col(i).cwiseAbs().maxCoeff(&pivot);
    if (dict.left(pivot, i) < Scalar(0)) {
      dict.left.col(i) *= Scalar(-1);
      dict.right.col(i) *= Scalar(-1);
    }
  }
  return dict;
}

/// argmin_a 0.5*||a - s||^2 + tau*||a||_0: keeps s_i iff |s_i| > sqrt(2 tau).
template <typename Derived>
SparseCodeT<typename Derived::Scalar> hard_threshold(const Eigen::MatrixBase<Derived>& coeffs,
                                                      typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  if (tau < Scalar(0)) throw std::invalid_argument("hard_threshold: tau must be non-negative");
  const Scalar cut = std::sqrt(Scalar(2) * tau);
  return (coeffs.array().abs() > cut).select(coeffs, Scalar(0));
}

/// argmin_a 0.5*||a - s||^2 + tau*||a||_1: sign(s_i) * max(|s_i| - tau, 0).
template <typename Derived>
SparseCodeT<typename Derived::Scalar> soft_threshold(const Eigen::MatrixBase<Derived>& coeffs,
                                                      typename Derived::Scalar tau) {
  using Scalar = typename Derived::Scalar;
  if (tau < Scalar(0)) throw std::invalid_argument("soft_threshold: tau must be non-negative");
  return coeffs.array().sign() * (coeffs.array().abs() - tau).cwiseMax(Scalar(0));
}

template <typename Scalar>
SparseCodeT<Scalar> hard_threshold_code(const GroupDictionaryT<Scalar>& dict, Scalar tau) {
  return hard_threshold(dict.singulars, tau);
}

template <typename Scalar>
SparseCodeT<Scalar> soft_threshold_code(const GroupDictionaryT<Scalar>& dict, Scalar tau) {
  return soft_threshold(dict.singulars, tau);
}

template <typename Scalar>
SparseCodeT<Scalar> threshold_code(const GroupDictionaryT<Scalar>& dict, Scalar tau, Thresholding mode) {
  return mode == Thresholding::hard ? hard_threshold_code(dict, tau) : soft_threshold_code(dict, tau);
}

/// sum_i code_i * left_i * right_i^T
template <typename Scalar>
typename GroupDictionaryT<Scalar>::Matrix reconstruct_group(const GroupDictionaryT<Scalar>& dict,
                                                            const SparseCodeT<Scalar>& code) {
  if (code.size() != dict.atoms()) throw std::invalid_argument("reconstruct_group: code length mismatch");
  Eigen::Index active = 0;
  for (Eigen::Index i = 0; i < code.size(); ++i)
    if (code(i) != Scalar(0)) active = i + 1;
  return dict.left.leftCols(active) * code.head(active).asDiagonal() * dict.right.leftCols(active).transpose();
}

/// Thresholded reconstruction of a group in one step, equal (up to rounding)
/// to reconstruct_group(d, threshold_code(d, tau, mode)) with
/// d = learn_dictionary(group).
///
/// Works on the eigendecomposition of the smaller Gram matrix. With right
/// singular vectors V_k of the kept atoms and w_i = code_i / s_i,
///   X_hat = X V_k diag(w) V_k^T        (c <= B_s)
///   X_hat = U_k diag(w) U_k^T X        (c >  B_s)
/// so neither the full SVD nor the discarded atoms are needed.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> shrink_group(
    const Eigen::MatrixBase<Derived>& group, typename Derived::Scalar tau, Thresholding mode) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (tau < Scalar(0)) throw std::invalid_argument("shrink_group: tau must be non-negative");
  if (!group.allFinite()) throw std::invalid_argument("shrink_group: non-finite group entry");

  const bool tall = group.cols() <= group.rows();
  const Eigen::Index side = tall ? group.cols() : group.rows();
  Matrix gram = Matrix::Zero(side, side);
  if (tall) {
    gram.template selfadjointView<Eigen::Lower>().rankUpdate(group.transpose());
  } else {
    gram.template selfadjointView<Eigen::Lower>().rankUpdate(group);
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::ComputeEigenvectors);

  // Eigenvalues are ascending; walk from the largest while atoms survive.
  const Scalar cut = mode == Thresholding::hard ? std::sqrt(Scalar(2) * tau) : tau;
  const Eigen::Index n = eig.eigenvalues().size();
  Eigen::Index kept = 0;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> weights(n);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    const Scalar s = std::sqrt(std::max(eig.eigenvalues()(i), Scalar(0)));
    if (!(s > cut) || s == Scalar(0)) break;
    weights(kept++) = mode == Thresholding::hard ? Scalar(1) : (s - tau) / s;
  }
  if (kept == 0) return Matrix::Zero(group.rows(), group.cols());

  const Matrix basis = eig.eigenvectors().rightCols(kept).rowwise().reverse();
  const auto w = weights.head(kept).asDiagonal();
  if (tall) {
    const Matrix projected = group * basis;
    return projected * w * basis.transpose();
  }
  const Matrix projected = basis.transpose() * group;
  return basis * w * projected;
}

}  // namespace gsr
