#include "svda/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace svda::spectral {

namespace {

constexpr int kMaxSweeps = 80;

/// Orthogonalizes the columns of `a` in place and accumulates the rotations
/// in `v` (starts as identity). Columns of the result are A·V.
void hestenes(Matrix& a, Matrix& v) {
  const Eigen::Index n = a.cols();
  v = Matrix::Identity(n, n);
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double alpha = a.col(p).squaredNorm();
        const double beta = a.col(q).squaredNorm();
        const double gamma = a.col(p).dot(a.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= 1e-15 * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
          const double ap = a(r, p), aq = a(r, q);
          a(r, p) = c * ap - s * aq;
          a(r, q) = s * ap + c * aq;
        }
        for (Eigen::Index r = 0; r < n; ++r) {
          const double vp = v(r, p), vq = v(r, q);
          v(r, p) = c * vp - s * vq;
          v(r, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
}

/// Replaces columns flagged in `fill` by an orthonormal completion of the
/// other columns (modified Gram-Schmidt against the standard basis).
void complete_basis(Matrix& u, const std::vector<bool>& fill) {
  const Eigen::Index m = u.rows();
  Eigen::Index next_basis = 0;
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    if (!fill[j]) continue;
    while (true) {
      if (next_basis >= m) throw std::logic_error("svd: cannot complete orthonormal basis");
      Vector cand = Vector::Unit(m, next_basis++);
      for (int pass = 0; pass < 2; ++pass) {
        for (Eigen::Index i = 0; i < u.cols(); ++i) {
          if (i == j || (fill[i] && i > j)) continue;
          cand -= u.col(i).dot(cand) * u.col(i);
        }
      }
      const double nrm = cand.norm();
      if (nrm > 1e-6) {
        u.col(j) = cand / nrm;
        break;
      }
    }
  }
}

}  // namespace

template <class T>
Matrix reshape_feature(const T* data, std::size_t c, std::size_t h, std::size_t w) {
  Matrix x(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(h * w));
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t j = 0; j < h * w; ++j) x(ch, j) = static_cast<double>(data[ch * h * w + j]);
  return x;
}

template <class T>
Matrix reshape_feature(const Tensor<T>& feature) {
  if (feature.rank() == 4 && feature.dim(0) == 1)
    return reshape_feature(feature.data.data(), feature.dim(1), feature.dim(2), feature.dim(3));
  if (feature.rank() != 3)
    throw std::invalid_argument("reshape_feature: expected C×H×W, got " + shape_str(feature.shape));
  return reshape_feature(feature.data.data(), feature.dim(0), feature.dim(1), feature.dim(2));
}

template <class T>
Tensor<T> unreshape_feature(const Matrix& x, std::size_t h, std::size_t w) {
  if (static_cast<std::size_t>(x.cols()) != h * w)
    throw std::invalid_argument("unreshape_feature: " + std::to_string(x.cols()) + " columns cannot form " +
                                std::to_string(h) + "x" + std::to_string(w));
  const auto c = static_cast<std::size_t>(x.rows());
  Tensor<T> out = Tensor<T>::zeros({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t j = 0; j < h * w; ++j) out.data[ch * h * w + j] = static_cast<T>(x(ch, j));
  return out;
}

SVDResult svd(const Matrix& x) {
  if (x.size() == 0) throw std::invalid_argument("svd: empty matrix");
  if (!x.allFinite()) throw std::invalid_argument("svd: matrix has non-finite entries");
  const bool tall = x.rows() >= x.cols();
  Matrix a = tall ? Matrix(x) : Matrix(x.transpose());
  Matrix rot;
  hestenes(a, rot);

  const Eigen::Index m = a.cols();
  Vector norms(m);
  for (Eigen::Index j = 0; j < m; ++j) norms(j) = a.col(j).norm();
  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return norms(i) > norms(j); });

  const double smax = m > 0 ? norms(order[0]) : 0.0;
  const double cutoff = smax * 1e-12;
  Matrix left(a.rows(), m), right(rot.rows(), m);
  Vector s(m);
  std::vector<bool> fill(m, false);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto src = order[j];
    s(j) = norms(src);
    right.col(j) = rot.col(src);
    if (s(j) > cutoff && s(j) > 0.0) {
      left.col(j) = a.col(src) / s(j);
    } else {
      fill[j] = true;
      left.col(j).setZero();
    }
  }
  complete_basis(left, fill);

  SVDResult r;
  if (tall) {
    r.U = std::move(left);
    r.V = std::move(right);
  } else {
    r.U = std::move(right);
    r.V = std::move(left);
  }
  r.S = std::move(s);
  return r;
}

Matrix topk_reconstruct(const SVDResult& d, Eigen::Index k) {
  const auto m = d.rank_bound();
  if (k < 1 || k > m)
    throw std::invalid_argument("topk_reconstruct: k=" + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
  return d.U.leftCols(k) * d.S.head(k).asDiagonal() * d.V.leftCols(k).transpose();
}

Matrix truncation_backward(const SVDResult& d, Eigen::Index k, const Matrix& upstream, double gap_eps,
                           GradMode mode) {
  const auto m = d.rank_bound();
  if (k < 1 || k > m)
    throw std::invalid_argument("truncation_backward: k=" + std::to_string(k) + " outside [1, " +
                                std::to_string(m) + "]");
  if (upstream.rows() != d.U.rows() || upstream.cols() != d.V.rows())
    throw std::invalid_argument("truncation_backward: upstream is " + std::to_string(upstream.rows()) + "x" +
                                std::to_string(upstream.cols()) + ", feature is " + std::to_string(d.U.rows()) +
                                "x" + std::to_string(d.V.rows()));
  if (!upstream.allFinite()) throw std::invalid_argument("truncation_backward: upstream gradient is non-finite");
  if (!(gap_eps > 0)) throw std::invalid_argument("truncation_backward: gap_eps must be positive");
  if (k == m) return upstream;

  const auto uk = d.U.leftCols(k);
  const auto vk = d.V.leftCols(k);
  if (mode == GradMode::detached) {
    Matrix dx = Matrix::Zero(upstream.rows(), upstream.cols());
    for (Eigen::Index i = 0; i < k; ++i) {
      const double ds = d.U.col(i).dot(upstream * d.V.col(i));
      dx.noalias() += ds * d.U.col(i) * d.V.col(i).transpose();
    }
    return dx;
  }

  // Work in the singular basis: Ĝ = Uᵀ G V. The top-left k×k block passes
  // straight through; each (kept i, dropped j) pair mixes Ĝ_ij and Ĝ_ji.
  const Matrix gh = d.U.transpose() * upstream * d.V;
  Matrix h = Matrix::Zero(m, m);
  h.topLeftCorner(k, k) = gh.topLeftCorner(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double si = d.S(i);
    for (Eigen::Index j = k; j < m; ++j) {
      const double sj = d.S(j);
      const double inv = 1.0 / std::max(si * si - sj * sj, gap_eps);
      const double a = si * si * inv;
      const double b = si * sj * inv;
      h(j, i) = a * gh(j, i) + b * gh(i, j);
      h(i, j) = a * gh(i, j) + b * gh(j, i);
    }
  }
  Matrix dx = d.U * h * d.V.transpose();
  // Directions outside span(U) / span(V) (singular value 0) pass through.
  const Matrix gvk = upstream * vk;
  dx.noalias() += (gvk - d.U * (d.U.transpose() * gvk)) * vk.transpose();
  const Matrix ukg = uk.transpose() * upstream;
  dx.noalias() += uk * (ukg - (ukg * d.V) * d.V.transpose());
  return dx;
}

Matrix truncation_backward(const Matrix& x, Eigen::Index k, const Matrix& upstream, double gap_eps, GradMode mode) {
  return truncation_backward(svd(x), k, upstream, gap_eps, mode);
}

template <class T>
Tensor<T> eigencam_map(const Tensor<T>& feature) {
  const bool batched = feature.rank() == 4;
  if (!(feature.rank() == 3 || (batched && feature.dim(0) == 1)))
    throw std::invalid_argument("eigencam_map: expected C×H×W, got " + shape_str(feature.shape));
  const std::size_t h = feature.dim(batched ? 2 : 1), w = feature.dim(batched ? 3 : 2);
  Tensor<T> out = Tensor<T>::zeros({h, w});
  const Matrix x = reshape_feature(feature);
  if (x.cwiseAbs().maxCoeff() == 0.0) return out;

  const SVDResult d = svd(x);
  Vector row = d.S(0) * d.V.col(0);
  if (row.sum() < 0) row = -row;
  row = row.cwiseMax(0.0);
  const double lo = row.minCoeff(), hi = row.maxCoeff();
  for (Eigen::Index j = 0; j < row.size(); ++j) {
    double v;
    if (hi > lo) {
      v = (row(j) - lo) / (hi - lo);
    } else {
      v = row(j) > 0 ? 1.0 : 0.0;
    }
    out.data[static_cast<std::size_t>(j)] = static_cast<T>(v);
  }
  return out;
}

template <class T>
Var svd_truncate(Graph<T>& g, Var feature, const TruncationSpec& spec) {
  const auto& x = g.value(feature);
  if (x.rank() != 4) throw std::invalid_argument("svd_truncate: expected N×C×H×W, got " + shape_str(x.shape));
  if (!(spec.gap_eps > 0)) throw std::invalid_argument("svd_truncate: gap_eps must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto m = static_cast<Eigen::Index>(std::min(c, h * w));
  const auto k = spec.k == 0 ? m : static_cast<Eigen::Index>(spec.k);
  if (k > m)
    throw std::invalid_argument("svd_truncate: k=" + std::to_string(k) + " exceeds min(C, HW)=" + std::to_string(m) +
                                " for feature " + shape_str(x.shape));

  if (k == m) {
    if (!x.all_finite()) throw std::invalid_argument("svd_truncate: non-finite feature");
    return g.custom("svd_truncate", {feature}, Tensor<T>(x.shape, x.data),
                    [](const typename Graph<T>::BackwardCtx& ctx) {
                      if (!ctx.grad_in[0]) return;
                      auto& gx = *ctx.grad_in[0];
                      for (std::size_t j = 0; j < gx.size(); ++j) gx[j] += ctx.grad_out[j];
                    });
  }

  auto decomps = std::make_shared<std::vector<SVDResult>>();
  decomps->reserve(n);
  Tensor<T> out = Tensor<T>::zeros(x.shape);
  const std::size_t per = c * h * w;
  for (std::size_t i = 0; i < n; ++i) {
    decomps->push_back(svd(reshape_feature(x.data.data() + i * per, c, h, w)));
    const Matrix z = topk_reconstruct(decomps->back(), k);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t j = 0; j < h * w; ++j) out.data[i * per + ch * h * w + j] = static_cast<T>(z(ch, j));
  }

  return g.custom("svd_truncate", {feature}, std::move(out),
                  [decomps, k, spec, n, c, h, w, per](const typename Graph<T>::BackwardCtx& ctx) {
                    if (!ctx.grad_in[0]) return;
                    auto& gx = *ctx.grad_in[0];
                    for (std::size_t i = 0; i < n; ++i) {
                      const Matrix up = reshape_feature(ctx.grad_out.data() + i * per, c, h, w);
                      const Matrix dx = truncation_backward((*decomps)[i], k, up, spec.gap_eps, spec.grad_mode);
                      for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t j = 0; j < h * w; ++j)
                          gx[i * per + ch * h * w + j] += static_cast<T>(dx(ch, j));
                    }
                  });
}

template Matrix reshape_feature<float>(const Tensor<float>&);
template Matrix reshape_feature<double>(const Tensor<double>&);
template Matrix reshape_feature<float>(const float*, std::size_t, std::size_t, std::size_t);
template Matrix reshape_feature<double>(const double*, std::size_t, std::size_t, std::size_t);
template Tensor<float> unreshape_feature<float>(const Matrix&, std::size_t, std::size_t);
template Tensor<double> unreshape_feature<double>(const Matrix&, std::size_t, std::size_t);
template Tensor<float> eigencam_map<float>(const Tensor<float>&);
template Tensor<double> eigencam_map<double>(const Tensor<double>&);
template Var svd_truncate<float>(Graph<float>&, Var, const TruncationSpec&);
template Var svd_truncate<double>(Graph<double>&, Var, const TruncationSpec&);

}  // namespace svda::spectral
