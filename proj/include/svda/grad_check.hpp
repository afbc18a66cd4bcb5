#pragma once

#include <cstdint>
#include <functional>

#include "svda/graph.hpp"

namespace svda {

struct GradCheckOptions {
  double eps = 1e-3;
  double tol = 1e-3;
  std::size_t samples = 20;
  std::uint64_t seed = 0;
  /// Denominator floor for the relative error, so near-zero gradients are
  /// compared on an absolute scale.
  double abs_floor = 1e-6;
  /// Additional floor as a fraction of the largest analytic gradient entry.
  /// Probes far below the gradient's scale are dominated by rounding in
  /// 32-bit evaluation.
  double rel_floor = 0.0;
  /// Drop probes where the left and right one-sided slopes disagree by more
  /// than this relative amount (a ReLU or max-pool kink inside ±eps). 0
  /// disables the filter.
  double kink_tol = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  bool non_finite = false;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;
};

/// Builds a scalar from a leaf on a fresh graph.
template <class T>
using ScalarFn = std::function<Var(Graph<T>&, Var)>;

/// Compares backward() against central differences on `samples` coordinates
/// of `point`, drawn without replacement from a seeded stream.
template <class T>
GradCheckReport grad_check(const ScalarFn<T>& fn, const Tensor<T>& point, const GradCheckOptions& opt);

extern template GradCheckReport grad_check<float>(const ScalarFn<float>&, const Tensor<float>&,
                                                  const GradCheckOptions&);
extern template GradCheckReport grad_check<double>(const ScalarFn<double>&, const Tensor<double>&,
                                                   const GradCheckOptions&);

}  // namespace svda
