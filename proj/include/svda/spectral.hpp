#pragma once

#include <Eigen/Core>
#include <cstddef>

#include "svda/graph.hpp"
#include "svda/tensor.hpp"

namespace svda::spectral {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Thin SVD X = U·diag(S)·Vᵀ with M = min(rows, cols). S is descending and
/// nonnegative; U and V have orthonormal columns (completed arbitrarily in
/// the null directions when X is rank deficient).
struct SVDResult {
  Matrix U;
  Vector S;
  Matrix V;

  Eigen::Index rank_bound() const { return S.size(); }
};

enum class GradMode {
  full,      ///< gradient through U, S and V
  detached,  ///< gradient through S only; singular vectors treated as constants
};

/// C×H×W (or 1×C×H×W) feature to the C×HW matrix, rows in channel order and
/// each row the row-major flattening of that channel.
template <class T>
Matrix reshape_feature(const Tensor<T>& feature);
template <class T>
Matrix reshape_feature(const T* data, std::size_t c, std::size_t h, std::size_t w);
/// Inverse of reshape_feature.
template <class T>
Tensor<T> unreshape_feature(const Matrix& x, std::size_t h, std::size_t w);

/// One-sided (Hestenes) Jacobi on the Gram side of the smaller dimension.
SVDResult svd(const Matrix& x);

/// Σ_{i<k} s_i u_i v_iᵀ for 1 ≤ k ≤ M.
Matrix topk_reconstruct(const SVDResult& d, Eigen::Index k);

/// Adjoint of X ↦ Z_k(X): maps dL/dZ_k to dL/dX. Inverse squared gaps
/// 1/(s_i² − s_j²) are clamped at 1/gap_eps, so ties degrade gracefully
/// instead of producing infinities. Returns `upstream` unchanged for k = M.
Matrix truncation_backward(const SVDResult& d, Eigen::Index k, const Matrix& upstream, double gap_eps,
                           GradMode mode = GradMode::full);
Matrix truncation_backward(const Matrix& x, Eigen::Index k, const Matrix& upstream, double gap_eps,
                           GradMode mode = GradMode::full);

/// Saliency of a C×H×W feature: the dominant right-singular row s₁v₁ᵀ,
/// sign-fixed to a nonnegative sum, negatives clamped, min-max scaled into
/// [0,1]. A flat map becomes 1 where positive and 0 elsewhere.
template <class T>
Tensor<T> eigencam_map(const Tensor<T>& feature);

struct TruncationSpec {
  /// Number of singular components kept; 0 keeps all M (identity map).
  std::size_t k = 1;
  GradMode grad_mode = GradMode::full;
  double gap_eps = 1e-6;
};

/// Graph op: per-image Top-k reconstruction of an N×C×H×W feature, with the
/// SVD recomputed from the current values on every call. At k = M the map is
/// the identity and no decomposition is done.
template <class T>
Var svd_truncate(Graph<T>& g, Var feature, const TruncationSpec& spec);

}  // namespace svda::spectral
