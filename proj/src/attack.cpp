#include "svda/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "svda/container.hpp"

namespace svda::attack {

std::string method_name(Method m) {
  switch (m) {
    case Method::ifgsm: return "ifgsm";
    case Method::mifgsm: return "mifgsm";
    case Method::nifgsm: return "nifgsm";
  }
  return "?";
}

Method parse_method(std::string_view s) {
  if (s == "ifgsm") return Method::ifgsm;
  if (s == "mifgsm") return Method::mifgsm;
  if (s == "nifgsm") return Method::nifgsm;
  throw std::invalid_argument("unknown attack method '" + std::string(s) + "' (valid: ifgsm, mifgsm, nifgsm)");
}

void AttackConfig::validate() const {
  auto bad = [](const std::string& what) { throw std::invalid_argument("invalid attack config: " + what); };
  if (!(epsilon > 0)) bad("epsilon must be > 0");
  if (steps < 1) bad("steps must be >= 1");
  if (!(step_size() > 0)) bad("alpha must be > 0");
  if (!(mu >= 0)) bad("mu must be >= 0");
  if (const auto& di = transforms.di) {
    if (!(di->p >= 0 && di->p <= 1)) bad("di_p must be in [0,1]");
    if (!(di->min_scale > 0 && di->min_scale <= 1)) bad("di_min_scale must be in (0,1]");
  }
  if (transforms.ti_len && (*transforms.ti_len < 1 || *transforms.ti_len % 2 == 0))
    bad("ti_len must be a positive odd integer");
  if (transforms.si_m && *transforms.si_m < 1) bad("si_m must be >= 1");
  if (const auto& vt = transforms.vt) {
    if (vt->n < 1) bad("vt_n must be >= 1");
    if (!(vt->beta >= 0)) bad("vt_beta must be >= 0");
  }
  if (hook) {
    if (!(hook->beta >= 0 && hook->beta <= 1)) bad("svd_beta must be in [0,1]");
    if (!(hook->gap_eps > 0)) bad("svd_gap_eps must be > 0");
    if (hook->layer.empty()) bad("svd_layer must be set");
  }
}

std::string AttackConfig::name() const {
  std::string s;
  if (transforms.vt) s += "vt-";
  if (transforms.si_m) s += "si-";
  if (transforms.ti_len) s += "ti-";
  if (transforms.di) s += "di-";
  return s + method_name(method);
}

void AdversarialBatch::check_invariants(double epsilon) const {
  const std::size_t n = size(), per = n ? clean.size() / n : 0;
  if (adv.shape != clean.shape) throw std::logic_error("adversarial batch: clean/adv shapes differ");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < per; ++j) {
      const float a = adv.data[i * per + j], c = clean.data[i * per + j];
      if (!(a >= 0.0f && a <= 255.0f) || std::abs(a - c) > epsilon + 1e-4)
        throw std::logic_error("adversarial batch: image " + std::to_string(i) + " violates the threat model");
    }
}

// ---- objectives -----------------------------------------------------------

template <class T>
Var fused_logits(const nn::Bound<T>& b, Var x, const SvdHook& hook) {
  Graph<T>& g = b.graph();
  const Var xl = b.to_layer(x, hook.layer);
  const Var xk = b.from_layer(xl, hook.layer);
  const Var zl = spectral::svd_truncate(g, xl, spectral::TruncationSpec{hook.k, hook.grad_mode, hook.gap_eps});
  const Var zk = b.from_layer(zl, hook.layer);
  return g.axpby(static_cast<T>(hook.beta), xk, static_cast<T>(1.0 - hook.beta), zk);
}

template <class T>
Var attack_loss(const nn::Bound<T>& b, Var x, std::span<const int> labels, const std::optional<SvdHook>& hook) {
  const Var logits = hook ? fused_logits(b, x, *hook) : b.full(x);
  return b.graph().cross_entropy(logits, labels);
}

template Var fused_logits<float>(const nn::Bound<float>&, Var, const SvdHook&);
template Var fused_logits<double>(const nn::Bound<double>&, Var, const SvdHook&);
template Var attack_loss<float>(const nn::Bound<float>&, Var, std::span<const int>, const std::optional<SvdHook>&);
template Var attack_loss<double>(const nn::Bound<double>&, Var, std::span<const int>, const std::optional<SvdHook>&);

// ---- transforms -----------------------------------------------------------

template <class T>
Var transform_di(Graph<T>& g, Var x, const DiParams& di, Rng& rng) {
  const auto& shape = g.value(x).shape;
  if (shape.size() != 4) throw std::invalid_argument("transform_di: expected NCHW, got " + shape_str(shape));
  if (!rng.bernoulli(di.p)) return x;
  const std::size_t n = shape[0], c = shape[1], h = shape[2], w = shape[3];
  const auto lo = static_cast<std::int64_t>(std::ceil(di.min_scale * static_cast<double>(h) - 1e-9));
  const auto sh = static_cast<std::size_t>(rng.uniform_int(std::max<std::int64_t>(lo, 1), static_cast<std::int64_t>(h)));
  const std::size_t sw = std::max<std::size_t>(1, (sh * w + h / 2) / h);
  const auto top = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(h - sh)));
  const auto left = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(w - sw)));
  std::vector<std::ptrdiff_t> index(g.value(x).size(), -1);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < sh; ++y)
        for (std::size_t xx = 0; xx < sw; ++xx) {
          const std::size_t sy = y * h / sh, sx = xx * w / sw;
          index[((b * c + ch) * h + top + y) * w + left + xx] =
              static_cast<std::ptrdiff_t>(((b * c + ch) * h + sy) * w + sx);
        }
  return g.gather(x, shape, std::move(index));
}

template Var transform_di<float>(Graph<float>&, Var, const DiParams&, Rng&);
template Var transform_di<double>(Graph<double>&, Var, const DiParams&, Rng&);

Tensor<float> transform_di(const Tensor<float>& x, const DiParams& di, Rng& rng) {
  Graph<float> g;
  return g.value(transform_di(g, g.constant(x), di, rng));
}

std::vector<double> gaussian_kernel(int len) {
  if (len < 1 || len % 2 == 0) throw std::invalid_argument("TI kernel length must be odd, got " + std::to_string(len));
  const double sigma = len / 3.0, c = (len - 1) / 2.0;
  std::vector<double> k(static_cast<std::size_t>(len * len));
  double total = 0;
  for (int i = 0; i < len; ++i)
    for (int j = 0; j < len; ++j) {
      const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
      k[static_cast<std::size_t>(i * len + j)] = v;
      total += v;
    }
  for (auto& v : k) v /= total;
  return k;
}

Tensor<float> transform_ti(const Tensor<float>& grad, int kernel_len) {
  const auto k = gaussian_kernel(kernel_len);
  if (grad.rank() != 4) throw std::invalid_argument("transform_ti: expected NCHW, got " + shape_str(grad.shape));
  const auto h = static_cast<long>(grad.dim(2)), w = static_cast<long>(grad.dim(3));
  const long r = kernel_len / 2;
  Tensor<float> out = Tensor<float>::zeros(grad.shape);
  for (std::size_t plane = 0; plane < grad.dim(0) * grad.dim(1); ++plane) {
    const float* src = grad.data.data() + plane * h * w;
    float* dst = out.data.data() + plane * h * w;
    for (long y = 0; y < h; ++y)
      for (long x = 0; x < w; ++x) {
        double acc = 0;
        for (long i = -r; i <= r; ++i) {
          if (y + i < 0 || y + i >= h) continue;
          for (long j = -r; j <= r; ++j) {
            if (x + j < 0 || x + j >= w) continue;
            acc += k[static_cast<std::size_t>((i + r) * kernel_len + j + r)] * src[(y + i) * w + x + j];
          }
        }
        dst[y * w + x] = static_cast<float>(acc);
      }
  }
  return out;
}

std::vector<Tensor<float>> transform_si(const Tensor<float>& x, int m) {
  if (m < 1) throw std::invalid_argument("transform_si: m must be >= 1");
  std::vector<Tensor<float>> out;
  for (int i = 0; i < m; ++i) {
    Tensor<float> c = x;
    const float f = std::ldexp(1.0f, -i);
    for (auto& v : c.data) v *= f;
    out.push_back(std::move(c));
  }
  return out;
}

Tensor<float> step_momentum(const Tensor<float>& g_prev, const Tensor<float>& g, double mu) {
  if (g_prev.shape != g.shape)
    throw std::invalid_argument("step_momentum: shapes differ (" + shape_str(g_prev.shape) + " vs " +
                                shape_str(g.shape) + ")");
  const std::size_t n = g.rank() ? g.dim(0) : 1, per = n ? g.size() / n : 0;
  Tensor<float> out = g;
  for (std::size_t i = 0; i < n; ++i) {
    double l1 = 0;
    for (std::size_t j = 0; j < per; ++j) l1 += std::abs(static_cast<double>(g.data[i * per + j]));
    const double inv = l1 > 0 ? 1.0 / l1 : 1.0;
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t q = i * per + j;
      out.data[q] = static_cast<float>(mu * g_prev.data[q] + g.data[q] * inv);
    }
  }
  return out;
}

Tensor<float> project_clip(const Tensor<float>& x_adv, const Tensor<float>& x_clean, double epsilon, double lo,
                           double hi) {
  if (x_adv.shape != x_clean.shape)
    throw std::invalid_argument("project_clip: shapes differ (" + shape_str(x_adv.shape) + " vs " +
                                shape_str(x_clean.shape) + ")");
  Tensor<float> out = x_adv;
  const auto eps = static_cast<float>(epsilon);
  for (std::size_t i = 0; i < out.size(); ++i) {
    float v = std::clamp(out.data[i], x_clean.data[i] - eps, x_clean.data[i] + eps);
    out.data[i] = std::clamp(v, static_cast<float>(lo), static_cast<float>(hi));
  }
  return out;
}

Tensor<float> loss_gradient(const GradientQuery& q, const Tensor<float>& x, Rng& rng) {
  Graph<float> g;
  nn::Bound<float> b(q.model, g);
  Tensor<float> leaf = x;
  leaf.requires_grad = true;
  const Var xv = g.leaf(std::move(leaf));
  const int m = q.transforms.si_m.value_or(1);
  Var total{};
  for (int i = 0; i < m; ++i) {
    Var xi = i == 0 ? xv : g.scale(xv, std::ldexp(1.0f, -i));
    if (q.transforms.di) xi = transform_di(g, xi, *q.transforms.di, rng);
    const Var l = attack_loss(b, xi, q.labels, q.hook);
    total = i == 0 ? l : g.add(total, l);
  }
  if (m > 1) total = g.scale(total, 1.0f / static_cast<float>(m));
  g.backward(total);
  Tensor<float> grad(x.shape, g.grad(xv));
  if (q.transforms.ti_len) grad = transform_ti(grad, *q.transforms.ti_len);
  return grad;
}

Tensor<float> variance_tuning(const GradientQuery& q, const Tensor<float>& x, const Tensor<float>& grad_at_x,
                              double epsilon, const VtParams& vt, Rng& rng) {
  if (vt.n < 1) throw std::invalid_argument("variance_tuning: N must be >= 1");
  const double radius = vt.beta * epsilon;
  std::vector<double> acc(x.size(), 0.0);
  for (int s = 0; s < vt.n; ++s) {
    Tensor<float> xs = x;
    for (auto& v : xs.data) v += static_cast<float>(rng.uniform(-radius, radius));
    const auto gs = loss_gradient(q, xs, rng);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += gs.data[i];
  }
  Tensor<float> v = Tensor<float>::zeros(x.shape);
  for (std::size_t i = 0; i < acc.size(); ++i)
    v.data[i] = static_cast<float>(acc[i] / vt.n - static_cast<double>(grad_at_x.data[i]));
  return v;
}

// ---- the attack loop ------------------------------------------------------

namespace {

struct ImageResult {
  Tensor<float> adv;
  ImageStatus status = ImageStatus::ok;
  std::vector<Tensor<float>> steps;
};

ImageResult attack_one(const nn::LayerGraph& model, const Tensor<float>& x0, int label, const AttackConfig& cfg,
                       Rng& rng, bool record) {
  const std::vector<int> labels{label};
  const GradientQuery q{model, labels, cfg.hook, cfg.transforms};
  const float alpha = static_cast<float>(cfg.step_size());
  ImageResult r{x0, ImageStatus::ok, {}};
  Tensor<float> momentum = Tensor<float>::zeros(x0.shape);
  Tensor<float> variance = Tensor<float>::zeros(x0.shape);
  for (int t = 0; t < cfg.steps; ++t) {
    Tensor<float> x_eval = r.adv;
    if (cfg.method == Method::nifgsm)
      for (std::size_t i = 0; i < x_eval.size(); ++i)
        x_eval.data[i] += alpha * static_cast<float>(cfg.mu) * momentum.data[i];
    Tensor<float> grad = loss_gradient(q, x_eval, rng);
    if (cfg.transforms.vt) {
      const auto next = variance_tuning(q, x_eval, grad, cfg.epsilon, *cfg.transforms.vt, rng);
      for (std::size_t i = 0; i < grad.size(); ++i) grad.data[i] += variance.data[i];
      variance = next;
    }
    if (!grad.all_finite()) {
      r.status = ImageStatus::non_finite_gradient;
      break;
    }
    const Tensor<float>* dir = &grad;
    if (cfg.method != Method::ifgsm) {
      momentum = step_momentum(momentum, grad, cfg.mu);
      dir = &momentum;
    }
    Tensor<float> stepped = r.adv;
    for (std::size_t i = 0; i < stepped.size(); ++i) {
      const float d = dir->data[i];
      stepped.data[i] += d > 0 ? alpha : (d < 0 ? -alpha : 0.0f);
    }
    r.adv = project_clip(stepped, x0, cfg.epsilon);
    if (record) r.steps.push_back(r.adv);
  }
  return r;
}

}  // namespace

AdversarialBatch run_attack(const nn::LayerGraph& model, const Tensor<float>& batch, const std::vector<int>& labels,
                            const AttackConfig& cfg, const RunOptions& opt) {
  cfg.validate();
  if (cfg.hook) model.index_of(cfg.hook->layer);
  if (batch.rank() != 4 || batch.dim(0) != labels.size())
    throw std::invalid_argument("run_attack: batch " + shape_str(batch.shape) + " does not match " +
                                std::to_string(labels.size()) + " labels");
  for (auto v : batch.data)
    if (!(v >= 0.0f && v <= 255.0f)) throw std::invalid_argument("run_attack: pixels must lie in [0,255]");
  for (auto l : labels)
    if (l < 0 || l >= model.num_classes)
      throw std::invalid_argument("run_attack: label " + std::to_string(l) + " out of range for " + model.arch);

  const std::size_t n = labels.size(), per = n ? batch.size() / n : 0;
  AdversarialBatch out;
  out.clean = batch;
  out.adv = batch;
  out.labels = labels;
  out.linf.assign(n, 0.0f);
  out.status.assign(n, ImageStatus::ok);
  out.source_model = model.arch;
  for (std::size_t i = 0; i < n; ++i) out.sample_ids.push_back(opt.first_index + static_cast<std::uint32_t>(i));
  if (opt.record_trajectory) out.trajectory.assign(static_cast<std::size_t>(cfg.steps), batch);

  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < n; i += stride) {
      Tensor<float> x0({1, batch.dim(1), batch.dim(2), batch.dim(3)},
                       std::vector<float>(batch.data.begin() + i * per, batch.data.begin() + (i + 1) * per));
      Rng rng(cfg.seed, opt.first_index + i);
      const auto r = attack_one(model, x0, labels[i], cfg, rng, opt.record_trajectory);
      std::copy(r.adv.data.begin(), r.adv.data.end(), out.adv.data.begin() + i * per);
      float linf = 0;
      for (std::size_t j = 0; j < per; ++j) linf = std::max(linf, std::abs(r.adv.data[j] - x0.data[j]));
      out.linf[i] = linf;
      out.status[i] = r.status;
      for (std::size_t t = 0; t < r.steps.size(); ++t)
        std::copy(r.steps[t].data.begin(), r.steps[t].data.end(), out.trajectory[t].data.begin() + i * per);
      // A run cut short keeps its last iterate for the remaining steps.
      for (std::size_t t = r.steps.size(); t < out.trajectory.size(); ++t)
        std::copy(r.adv.data.begin(), r.adv.data.end(), out.trajectory[t].data.begin() + i * per);
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, opt.threads));
  if (workers == 1 || n < 2) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  }
  return out;
}

void save_batch(const std::filesystem::path& path, const AdversarialBatch& b, const std::string& config_echo) {
  std::vector<std::uint32_t> labels(b.labels.begin(), b.labels.end());
  std::vector<std::uint8_t> status;
  for (auto s : b.status) status.push_back(static_cast<std::uint8_t>(s));
  io::save(path, {io::Blob::f32("clean", b.clean), io::Blob::f32("adv", b.adv), io::Blob::u32("labels", labels),
                  io::Blob::f32("linf", Shape{b.linf.size()}, b.linf), io::Blob::u8("status", Shape{status.size()}, status),
                  io::Blob::u32("sample_ids", b.sample_ids), io::Blob::text("meta.source", b.source_model),
                  io::Blob::text("meta.config", config_echo)});
}

AdversarialBatch load_batch(const std::filesystem::path& path, std::string* config_echo) {
  const auto blobs = io::load(path);
  AdversarialBatch b;
  b.clean = io::find(blobs, "clean").as_f32();
  b.adv = io::find(blobs, "adv").as_f32();
  for (auto l : io::find(blobs, "labels").as_u32()) b.labels.push_back(static_cast<int>(l));
  b.linf = io::find(blobs, "linf").as_f32().data;
  for (auto s : io::find(blobs, "status").bytes) b.status.push_back(static_cast<ImageStatus>(s));
  b.sample_ids = io::find(blobs, "sample_ids").as_u32();
  b.source_model = io::find(blobs, "meta.source").as_text();
  if (config_echo) *config_echo = io::find(blobs, "meta.config").as_text();
  const std::size_t n = b.labels.size();
  if (b.clean.shape != b.adv.shape || b.clean.rank() != 4 || b.clean.dim(0) != n || b.linf.size() != n ||
      b.status.size() != n || b.sample_ids.size() != n)
    throw io::FormatError(io::FormatError::Kind::structural, path.string() + ": inconsistent adversarial batch");
  return b;
}

}  // namespace svda::attack
