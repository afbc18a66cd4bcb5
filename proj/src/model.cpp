#include "svda/model.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "svda/container.hpp"
#include "svda/rng.hpp"

namespace svda::nn {

std::vector<std::string> LayerGraph::layer_names() const {
  std::vector<std::string> out;
  for (const auto& l : layers) out.push_back(l.name);
  return out;
}

std::size_t LayerGraph::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return i;
  std::string valid;
  for (const auto& l : layers) valid += (valid.empty() ? "" : ", ") + l.name;
  throw std::invalid_argument("unknown layer '" + std::string(name) + "' for " + arch + " (valid: " + valid + ")");
}

std::size_t LayerGraph::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers)
    for (const auto& p : l.params) n += p.size();
  return n;
}

namespace {

class Builder {
 public:
  Builder(std::string arch, int classes, std::uint64_t seed) : seed_(seed) {
    m_.arch = std::move(arch);
    m_.num_classes = classes;
    Layer s;
    s.name = "scale";
    s.kind = LayerKind::scale;
    s.factor = 1.0f / 255.0f;
    s.out_shape = {m_.in_c, m_.in_h, m_.in_w};
    m_.layers.push_back(std::move(s));
  }

  void conv(std::string name, std::size_t out, std::size_t k, int stride, std::optional<PoolKind> pool = {}) {
    const Shape in = m_.layers.back().out_shape;
    Layer l;
    l.name = std::move(name);
    l.kind = LayerKind::conv_block;
    l.stride = stride;
    l.pad = static_cast<int>(k / 2);
    l.pool = pool;
    l.params = {he({out, in[0], k, k}, in[0] * k * k, 2.0), Tensor<float>::zeros({out})};
    std::size_t h = (in[1] + 2 * l.pad - k) / stride + 1, w = (in[2] + 2 * l.pad - k) / stride + 1;
    if (pool) h /= 2, w /= 2;
    l.out_shape = {out, h, w};
    m_.layers.push_back(std::move(l));
  }

  void global_pool() {
    Layer l;
    l.name = "pool";
    l.kind = LayerKind::global_pool;
    l.out_shape = {m_.layers.back().out_shape[0]};
    m_.layers.push_back(std::move(l));
  }

  void dense(std::string name, std::size_t out, bool relu) {
    const std::size_t in = m_.layers.back().out_shape[0];
    Layer l;
    l.name = std::move(name);
    l.kind = LayerKind::dense;
    l.relu = relu;
    l.params = {he({in, out}, in, relu ? 2.0 : 1.0), Tensor<float>::zeros({out})};
    l.out_shape = {out};
    m_.layers.push_back(std::move(l));
  }

  LayerGraph take() { return std::move(m_); }

 private:
  Tensor<float> he(Shape shape, std::size_t fan_in, double gain) {
    Rng rng(seed_, m_.layers.size());
    const double sd = std::sqrt(gain / static_cast<double>(fan_in));
    Tensor<float> t = Tensor<float>::zeros(std::move(shape));
    for (auto& v : t.data) v = static_cast<float>(sd * rng.normal());
    return t;
  }

  LayerGraph m_;
  std::uint64_t seed_;
};

}  // namespace

LayerGraph build_model(std::string_view arch, int num_classes, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("build_model: need at least 2 classes");
  const auto classes = static_cast<std::size_t>(num_classes);
  Builder b(std::string(arch), num_classes, seed);
  if (arch == "convnet_a") {
    b.conv("block1", 16, 3, 1, PoolKind::max);
    b.conv("block2", 32, 3, 1, PoolKind::max);
    b.conv("block3", 32, 3, 1);
    b.conv("block4", 64, 3, 1, PoolKind::max);
    b.global_pool();
    b.dense("fc", classes, false);
  } else if (arch == "convnet_b") {
    b.conv("block1", 12, 5, 2);
    b.conv("block2", 24, 3, 1, PoolKind::max);
    b.conv("block3", 48, 3, 1);
    b.conv("block4", 48, 3, 2);
    b.global_pool();
    b.dense("fc", classes, false);
  } else if (arch == "convnet_c") {
    b.conv("block1", 16, 3, 1, PoolKind::avg);
    b.conv("block2", 16, 3, 1, PoolKind::max);
    b.conv("block3", 32, 3, 1);
    b.conv("block4", 32, 3, 1, PoolKind::max);
    b.global_pool();
    b.dense("hidden", 32, true);
    b.dense("fc", classes, false);
  } else {
    throw std::invalid_argument("unknown architecture '" + std::string(arch) +
                                "' (valid: convnet_a, convnet_b, convnet_c)");
  }
  return b.take();
}

template <class T>
Bound<T>::Bound(const LayerGraph& model, Graph<T>& g, bool trainable) : model_(model), g_(g) {
  for (const auto& l : model.layers) {
    std::vector<Var> vs;
    for (const auto& p : l.params) {
      Tensor<T> t = p.template cast<T>();
      t.requires_grad = trainable;
      vs.push_back(trainable ? g.leaf(std::move(t)) : g.constant(std::move(t)));
      if (trainable) flat_.push_back(vs.back());
    }
    vars_.push_back(std::move(vs));
  }
}

template <class T>
void Bound<T>::check_input(Var x, std::size_t layer) const {
  const Shape want = layer == 0 ? Shape{model_.in_c, model_.in_h, model_.in_w} : model_.layers[layer - 1].out_shape;
  const auto& got = g_.value(x).shape;
  const bool ok = got.size() == want.size() + 1 && got[0] > 0 && std::equal(want.begin(), want.end(), got.begin() + 1);
  if (!ok) {
    std::string where = layer == 0 ? "model input" : "output of layer '" + model_.layers[layer - 1].name + "'";
    throw std::invalid_argument(model_.arch + ": expected N×" + shape_str(want) + " as " + where + ", got " +
                                shape_str(got));
  }
}

template <class T>
Var Bound<T>::run(Var x, std::size_t begin, std::size_t end) const {
  if (begin > end || end > model_.layers.size()) throw std::out_of_range("Bound::run: bad layer range");
  if (begin == end) return x;
  check_input(x, begin);
  for (std::size_t i = begin; i < end; ++i) {
    const Layer& l = model_.layers[i];
    const auto& p = vars_[i];
    switch (l.kind) {
      case LayerKind::scale: x = g_.scale(x, static_cast<T>(l.factor)); break;
      case LayerKind::conv_block:
        x = g_.relu(g_.conv2d(x, p[0], p[1], l.stride, l.pad));
        if (l.pool) x = g_.pool2d(x, *l.pool, 2, 2);
        break;
      case LayerKind::global_pool: x = g_.global_avg_pool(x); break;
      case LayerKind::dense:
        if (const auto& s = g_.value(x).shape; s.size() > 2) x = g_.reshape(x, {s[0], numel(s) / s[0]});
        x = g_.dense(x, p[0], p[1]);
        if (l.relu) x = g_.relu(x);
        break;
    }
  }
  return x;
}

template <class T>
Var Bound<T>::full(Var x) const {
  return run(x, 0, model_.layers.size());
}

template <class T>
Var Bound<T>::to_layer(Var x, std::string_view name) const {
  return run(x, 0, model_.index_of(name) + 1);
}

template <class T>
Var Bound<T>::from_layer(Var feature, std::string_view name) const {
  return run(feature, model_.index_of(name) + 1, model_.layers.size());
}

template class Bound<float>;
template class Bound<double>;

Tensor<float> forward_full(const LayerGraph& m, const Tensor<float>& batch) {
  Graph<float> g;
  Bound<float> b(m, g);
  return g.value(b.full(g.constant(batch)));
}

Tensor<float> forward_to_layer(const LayerGraph& m, const Tensor<float>& batch, std::string_view name) {
  Graph<float> g;
  Bound<float> b(m, g);
  return g.value(b.to_layer(g.constant(batch), name));
}

Tensor<float> forward_from_layer(const LayerGraph& m, const Tensor<float>& feature, std::string_view name) {
  Graph<float> g;
  Bound<float> b(m, g);
  return g.value(b.from_layer(g.constant(feature), name));
}

std::vector<int> predict(const LayerGraph& m, const Tensor<float>& batch, int threads) {
  if (batch.rank() != 4) throw std::invalid_argument("predict: expected NCHW batch, got " + shape_str(batch.shape));
  const std::size_t n = batch.dim(0), sz = batch.size() / std::max<std::size_t>(n, 1);
  std::vector<int> out(n);
  auto work = [&](std::size_t first, std::size_t step) {
    for (std::size_t i = first; i < n; i += step) {
      Tensor<float> one({1, batch.dim(1), batch.dim(2), batch.dim(3)},
                        std::vector<float>(batch.data.begin() + i * sz, batch.data.begin() + (i + 1) * sz));
      const auto logits = forward_full(m, one);
      out[i] = static_cast<int>(std::max_element(logits.data.begin(), logits.data.end()) - logits.data.begin());
    }
  };
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || n < 2) {
    work(0, 1);
    return out;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w, workers);
  pool.clear();
  return out;
}

// ---- checkpoints --------------------------------------------------------

namespace {

std::string meta_value(const std::string& text, const std::string& key, const std::string& file) {
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && line.substr(0, eq) == key) return line.substr(eq + 1);
  }
  throw io::FormatError(io::FormatError::Kind::structural, file + ": metadata lacks '" + key + "'");
}

template <class N>
N parse_num(const std::string& s, const std::string& what) {
  N v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw io::FormatError(io::FormatError::Kind::structural, "bad metadata value for " + what + ": '" + s + "'");
  return v;
}

}  // namespace

void save_checkpoint(const LayerGraph& m, const TrainingInfo& info, const std::filesystem::path& path) {
  std::vector<io::Blob> blobs;
  for (const auto& l : m.layers) {
    if (l.params.empty()) continue;
    blobs.push_back(io::Blob::f32(l.name + ".weight", l.params[0]));
    blobs.push_back(io::Blob::f32(l.name + ".bias", l.params[1]));
  }
  blobs.push_back(io::Blob::text("meta.arch", "arch=" + m.arch + "\nnum_classes=" + std::to_string(m.num_classes) + "\n"));
  char acc[32];
  std::snprintf(acc, sizeof acc, "%.6f", info.final_test_acc);
  blobs.push_back(io::Blob::text("meta.training", "epochs=" + std::to_string(info.epochs) +
                                                      "\nseed=" + std::to_string(info.seed) +
                                                      "\nfinal_test_acc=" + acc + "\n"));
  io::save(path, blobs);
}

LayerGraph load_checkpoint(const std::filesystem::path& path, TrainingInfo* info) {
  const auto blobs = io::load(path);
  const std::string file = path.string();
  const auto arch_text = io::find(blobs, "meta.arch").as_text();
  LayerGraph m = build_model(meta_value(arch_text, "arch", file),
                             parse_num<int>(meta_value(arch_text, "num_classes", file), "num_classes"), 0);

  std::size_t weight_blobs = 0, expected = 0;
  for (const auto& b : blobs)
    if (b.name.rfind("meta.", 0) != 0) ++weight_blobs;
  for (auto& l : m.layers) {
    if (l.params.empty()) continue;
    expected += 2;
    const char* suffix[] = {".weight", ".bias"};
    for (std::size_t k = 0; k < 2; ++k) {
      const auto* b = io::find_opt(blobs, l.name + suffix[k]);
      if (!b)
        throw io::FormatError(io::FormatError::Kind::structural,
                              file + ": structural error: layer '" + l.name + "' missing blob " + l.name + suffix[k]);
      auto t = b->as_f32();
      if (t.shape != l.params[k].shape)
        throw io::FormatError(io::FormatError::Kind::structural,
                              file + ": structural error: layer '" + l.name + "' has shape " + shape_str(t.shape) +
                                  ", " + m.arch + " expects " + shape_str(l.params[k].shape));
      l.params[k] = std::move(t);
    }
  }
  if (weight_blobs != expected) {
    std::string extra;
    for (const auto& b : blobs)
      if (b.name.rfind("meta.", 0) != 0 && extra.empty()) {
        const auto layer = b.name.substr(0, b.name.find('.'));
        bool known = false;
        for (const auto& l : m.layers) known |= !l.params.empty() && l.name == layer;
        if (!known) extra = layer;
      }
    throw io::FormatError(io::FormatError::Kind::structural,
                          file + ": structural error: " + std::to_string(weight_blobs) + " weight blobs but " + m.arch +
                              " expects " + std::to_string(expected) +
                              (extra.empty() ? std::string() : " (unexpected layer '" + extra + "')"));
  }
  if (info) {
    if (const auto* t = io::find_opt(blobs, "meta.training")) {
      const auto text = t->as_text();
      info->epochs = parse_num<std::size_t>(meta_value(text, "epochs", file), "epochs");
      info->seed = parse_num<std::uint64_t>(meta_value(text, "seed", file), "seed");
      info->final_test_acc = std::stod(meta_value(text, "final_test_acc", file));
    }
  }
  return m;
}

}  // namespace svda::nn
