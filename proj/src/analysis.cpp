#include "svda/analysis.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "svda/container.hpp"

namespace svda::analysis {

double linear_cka(const Matrix& x, const Matrix& y, bool center) {
  if (x.rows() != y.rows())
    throw std::invalid_argument("linear_cka: sample counts differ (" + std::to_string(x.rows()) + " vs " +
                                std::to_string(y.rows()) + ")");
  if (!x.allFinite() || !y.allFinite()) throw std::invalid_argument("linear_cka: non-finite activations");
  Matrix a = x, b = y;
  if (center) {
    a.rowwise() -= a.colwise().mean();
    b.rowwise() -= b.colwise().mean();
  }
  const Matrix ka = a * a.transpose(), kb = b * b.transpose();
  const double na = ka.norm(), nb = kb.norm();
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("linear_cka: zero activation matrix");
  return (ka.array() * kb.array()).sum() / (na * nb);
}

ActivationSet collect(const nn::LayerGraph& model, const Tensor<float>& batch, const std::string& layer,
                      const std::vector<std::uint32_t>& sample_ids) {
  const auto f = nn::forward_to_layer(model, batch, layer);
  const std::size_t n = f.dim(0), d = f.size() / n;
  if (sample_ids.size() != n)
    throw std::invalid_argument("collect: " + std::to_string(sample_ids.size()) + " sample ids for " +
                                std::to_string(n) + " images");
  ActivationSet s{model.arch, layer, Matrix(n, d), sample_ids};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.matrix(i, j) = f.data[i * d + j];
  return s;
}

std::string CKAReport::to_csv() const {
  std::string out = "models,layer,variant,cka\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.9f", r.cka);
    out += r.models + "," + r.layer + "," + r.variant + "," + buf + "\n";
  }
  return out;
}

CKAReport CKAReport::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "models,layer,variant,cka")
    throw std::invalid_argument("CKA csv: unexpected header '" + line + "'");
  CKAReport rep;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 4) throw std::invalid_argument("CKA csv: bad row '" + line + "'");
    rep.rows.push_back({f[0], f[1], f[2], std::stod(f[3])});
  }
  return rep;
}

CKAReport cka_layerwise(const nn::LayerGraph& model, const Tensor<float>& clean, const Tensor<float>& adv,
                        const std::vector<std::uint32_t>& clean_ids, const std::vector<std::uint32_t>& adv_ids,
                        const std::vector<std::string>& layers, const std::string& variant, bool center) {
  if (clean_ids != adv_ids || clean.shape != adv.shape)
    throw std::invalid_argument("cka_layerwise: clean and adversarial batches are not paired by sample id");
  CKAReport rep;
  for (const auto& layer : layers) {
    const auto a = collect(model, clean, layer, clean_ids);
    const auto b = collect(model, adv, layer, adv_ids);
    rep.rows.push_back({model.arch, layer, variant, linear_cka(a.matrix, b.matrix, center)});
  }
  return rep;
}

CKAReport cka_crossmodel(const nn::LayerGraph& source, const nn::LayerGraph& target,
                         const std::vector<VariantBatch>& batches, const std::vector<std::string>& layers,
                         bool center) {
  if (source.in_c != target.in_c || source.in_h != target.in_h || source.in_w != target.in_w)
    throw std::invalid_argument("cka_crossmodel: " + source.arch + " and " + target.arch +
                                " take different input shapes");
  CKAReport rep;
  for (const auto& vb : batches) {
    std::vector<std::uint32_t> ids(vb.images->dim(0));
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i);
    for (const auto& layer : layers) {
      const auto a = collect(source, *vb.images, layer, ids);
      const auto b = collect(target, *vb.images, layer, ids);
      rep.rows.push_back({source.arch + "->" + target.arch, layer, vb.variant, linear_cka(a.matrix, b.matrix, center)});
    }
  }
  return rep;
}

void save_activations(const std::filesystem::path& path, const std::vector<ActivationSet>& sets) {
  if (sets.empty()) throw std::invalid_argument("save_activations: nothing to save");
  std::vector<io::Blob> blobs;
  for (const auto& s : sets) {
    if (s.sample_ids != sets[0].sample_ids || s.model_id != sets[0].model_id)
      throw std::invalid_argument("save_activations: sets must share model and sample ids");
    std::vector<float> v(static_cast<std::size_t>(s.matrix.size()));
    for (Eigen::Index i = 0; i < s.matrix.rows(); ++i)
      for (Eigen::Index j = 0; j < s.matrix.cols(); ++j)
        v[static_cast<std::size_t>(i * s.matrix.cols() + j)] = static_cast<float>(s.matrix(i, j));
    blobs.push_back(io::Blob::f32(s.layer, Shape{static_cast<std::size_t>(s.matrix.rows()),
                                                 static_cast<std::size_t>(s.matrix.cols())}, v));
  }
  blobs.push_back(io::Blob::u32("sample_ids", sets[0].sample_ids));
  blobs.push_back(io::Blob::text("meta.model", sets[0].model_id));
  io::save(path, blobs);
}

std::vector<ActivationSet> load_activations(const std::filesystem::path& path) {
  const auto blobs = io::load(path);
  const auto ids = io::find(blobs, "sample_ids").as_u32();
  const auto model = io::find(blobs, "meta.model").as_text();
  std::vector<ActivationSet> out;
  for (const auto& b : blobs) {
    if (b.name == "sample_ids" || b.name.rfind("meta.", 0) == 0) continue;
    const auto t = b.as_f32();
    if (t.rank() != 2 || t.dim(0) != ids.size())
      throw io::FormatError(io::FormatError::Kind::structural,
                            path.string() + ": activation blob '" + b.name + "' does not match the sample table");
    ActivationSet s{model, b.name, Matrix(t.dim(0), t.dim(1)), ids};
    for (std::size_t i = 0; i < t.dim(0); ++i)
      for (std::size_t j = 0; j < t.dim(1); ++j) s.matrix(i, j) = t.data[i * t.dim(1) + j];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace svda::analysis
