#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "svda/model.hpp"
#include "svda/rng.hpp"
#include "svda/spectral.hpp"

namespace svda::attack {

enum class Method { ifgsm, mifgsm, nifgsm };

std::string method_name(Method m);
Method parse_method(std::string_view s);

struct DiParams {
  double p = 0.5;
  double min_scale = 0.9;  ///< resize side drawn from [ceil(min_scale·H), H]
};
struct VtParams {
  double beta = 1.5;
  int n = 20;
};

/// Enabled transforms. They always compose as SI → DI → gradient → TI → VT.
struct Transforms {
  std::optional<DiParams> di;
  std::optional<int> ti_len;
  std::optional<int> si_m;
  std::optional<VtParams> vt;

  bool empty() const { return !di && !ti_len && !si_m && !vt; }
};

struct SvdHook {
  std::string layer = "block3";
  std::size_t k = 1;  ///< 0 = full rank
  double beta = 0.5;
  spectral::GradMode grad_mode = spectral::GradMode::full;
  double gap_eps = 1e-6;
};

struct AttackConfig {
  Method method = Method::mifgsm;
  double epsilon = 16.0;
  int steps = 10;
  std::optional<double> alpha;  ///< default ε/T
  double mu = 1.0;
  Transforms transforms;
  std::optional<SvdHook> hook;
  std::uint64_t seed = 0;

  double step_size() const { return alpha ? *alpha : epsilon / steps; }
  /// Throws std::invalid_argument naming the first offending field.
  void validate() const;
  /// e.g. "ti-di-mifgsm"; the SVD hook is reported separately.
  std::string name() const;
};

enum class ImageStatus : std::uint8_t { ok = 0, non_finite_gradient = 1 };

struct AdversarialBatch {
  Tensor<float> clean, adv;
  std::vector<int> labels;
  std::vector<float> linf;
  std::vector<ImageStatus> status;
  std::vector<std::uint32_t> sample_ids;
  std::string source_model;
  /// adv after each step, when requested.
  std::vector<Tensor<float>> trajectory;

  std::size_t size() const { return labels.size(); }
  /// Throws if any image leaves the ε-ball (with 1e-4 slack) or [0,255].
  void check_invariants(double epsilon) const;
};

// ---- objectives -----------------------------------------------------------

/// β·X_K + (1−β)·Z_k with X_K from the untouched feature and Z_k from its
/// per-image Top-k reconstruction at `hook.layer`.
template <class T>
Var fused_logits(const nn::Bound<T>& b, Var x, const SvdHook& hook);

/// Cross-entropy of the fused logits, or of the plain logits without a hook.
template <class T>
Var attack_loss(const nn::Bound<T>& b, Var x, std::span<const int> labels, const std::optional<SvdHook>& hook);

extern template Var fused_logits<float>(const nn::Bound<float>&, Var, const SvdHook&);
extern template Var fused_logits<double>(const nn::Bound<double>&, Var, const SvdHook&);
extern template Var attack_loss<float>(const nn::Bound<float>&, Var, std::span<const int>, const std::optional<SvdHook>&);
extern template Var attack_loss<double>(const nn::Bound<double>&, Var, std::span<const int>,
                                        const std::optional<SvdHook>&);

// ---- transforms and update rules ----------------------------------------

/// Random nearest-neighbour resize to a side in [ceil(min_scale·H), H] and
/// random zero padding back to H×W, with probability p. Differentiable.
template <class T>
Var transform_di(Graph<T>& g, Var x, const DiParams& di, Rng& rng);
Tensor<float> transform_di(const Tensor<float>& x, const DiParams& di, Rng& rng);

/// Normalized Gaussian kernel, σ = len/3, row-major len×len.
std::vector<double> gaussian_kernel(int len);
/// Depthwise same-padded convolution of each channel with gaussian_kernel(len).
Tensor<float> transform_ti(const Tensor<float>& grad, int kernel_len);

std::vector<Tensor<float>> transform_si(const Tensor<float>& x, int m);

/// mu·g_prev + g/‖g‖₁ per image; an all-zero image gradient is added as is.
Tensor<float> step_momentum(const Tensor<float>& g_prev, const Tensor<float>& g, double mu);

/// Clamp into [clean−ε, clean+ε], then into [lo, hi].
Tensor<float> project_clip(const Tensor<float>& x_adv, const Tensor<float>& x_clean, double epsilon, double lo = 0.0,
                           double hi = 255.0);

/// Gradient of the attack loss w.r.t. x with SI copies, DI and TI applied.
struct GradientQuery {
  const nn::LayerGraph& model;
  std::span<const int> labels;
  const std::optional<SvdHook>& hook;
  const Transforms& transforms;
};
Tensor<float> loss_gradient(const GradientQuery& q, const Tensor<float>& x, Rng& rng);

/// (1/N)·Σ ∇L(x + U(−β·ε, β·ε)) − ∇L(x), both gradients from loss_gradient.
Tensor<float> variance_tuning(const GradientQuery& q, const Tensor<float>& x, const Tensor<float>& grad_at_x,
                              double epsilon, const VtParams& vt, Rng& rng);

struct RunOptions {
  int threads = 1;
  bool record_trajectory = false;
  /// Image i draws from the stream (seed, first_index + i).
  std::uint32_t first_index = 0;
};

/// Untargeted ℓ∞ attack, image by image.
AdversarialBatch run_attack(const nn::LayerGraph& model, const Tensor<float>& batch, const std::vector<int>& labels,
                            const AttackConfig& cfg, const RunOptions& opt = {});

void save_batch(const std::filesystem::path& path, const AdversarialBatch& b, const std::string& config_echo);
AdversarialBatch load_batch(const std::filesystem::path& path, std::string* config_echo = nullptr);

}  // namespace svda::attack
