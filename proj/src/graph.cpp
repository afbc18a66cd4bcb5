#include "svda/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace svda {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b, const std::string& why) {
  throw std::invalid_argument(op + ": " + why + " (got " + shape_str(a) + " and " + shape_str(b) + ")");
}

struct ConvGeom {
  std::size_t n, c, h, w, o, k, oh, ow;
  int stride, pad;
};

template <class T>
void im2col(const T* img, const ConvGeom& g, T* cols) {
  const std::size_t p = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = cols + ((c * g.k + ki) * g.k + kj) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - g.pad;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - g.pad;
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(g.h) &&
                                ix < static_cast<std::ptrdiff_t>(g.w);
            row[oy * g.ow + ox] = inside ? img[(c * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* img) {
  const std::size_t p = g.oh * g.ow;
  for (std::size_t c = 0; c < g.c; ++c) {
    for (std::size_t ki = 0; ki < g.k; ++ki) {
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = cols + ((c * g.k + ki) * g.k + kj) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ki) - g.pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kj) - g.pad;
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
            img[(c * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Var Graph<T>::push(std::string op, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward) {
  Node node;
  node.op = std::move(op);
  bool rg = false;
  for (auto v : inputs) {
    if (v.id >= nodes_.size()) throw std::out_of_range("graph: input var does not belong to this graph");
    node.inputs.push_back(v.id);
    rg = rg || nodes_[v.id].value.requires_grad;
  }
  value.requires_grad = rg;
  value.grad.reset();
  node.value = std::move(value);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  has_grads_ = false;
  return Var{nodes_.size() - 1};
}

template <class T>
Var Graph<T>::leaf(Tensor<T> t) {
  if (numel(t.shape) != t.data.size()) throw std::invalid_argument("graph leaf: shape/data length mismatch");
  Node node;
  node.op = "leaf";
  node.is_leaf = true;
  t.grad.reset();
  node.value = std::move(t);
  nodes_.push_back(std::move(node));
  has_grads_ = false;
  return Var{nodes_.size() - 1};
}

template <class T>
Var Graph<T>::constant(Tensor<T> t) {
  t.requires_grad = false;
  return leaf(std::move(t));
}

template <class T>
const typename Graph<T>::Buffer& Graph<T>::grad(Var v) const {
  if (!has_grads_) throw std::logic_error("graph: backward() has not been run");
  const auto& buf = grads_.at(v.id);
  if (!nodes_.at(v.id).value.requires_grad) throw std::logic_error("graph: node does not require grad");
  return buf;
}

template <class T>
void Graph<T>::backward(Var loss) {
  const auto& lv = nodes_.at(loss.id).value;
  if (lv.size() != 1) throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(lv.shape));
  grads_.assign(nodes_.size(), {});
  for (std::size_t i = 0; i <= loss.id; ++i) {
    if (nodes_[i].value.requires_grad) grads_[i].assign(nodes_[i].value.size(), T(0));
  }
  if (lv.requires_grad) grads_[loss.id][0] = T(1);

  std::vector<const Tensor<T>*> in;
  std::vector<Buffer*> gin;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.is_leaf || !node.value.requires_grad || !node.backward) continue;
    in.clear();
    gin.clear();
    for (auto id : node.inputs) {
      in.push_back(&nodes_[id].value);
      gin.push_back(nodes_[id].value.requires_grad ? &grads_[id] : nullptr);
    }
    node.backward(BackwardCtx{in, node.value, grads_[i], gin});
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    auto& node = nodes_[i];
    if (node.is_leaf && node.value.requires_grad) {
      node.value.grad = grads_[i].empty() ? Buffer(node.value.size(), T(0)) : grads_[i];
    }
  }
  has_grads_ = true;
}

template <class T>
Var Graph<T>::conv2d(Var xv, Var wv, Var bv, int stride, int pad) {
  const auto& x = value(xv);
  const auto& w = value(wv);
  const auto& b = value(bv);
  if (x.rank() != 4 || w.rank() != 4) shape_error("conv2d", x.shape, w.shape, "input and weight must be rank 4");
  if (x.dim(1) != w.dim(1)) shape_error("conv2d", x.shape, w.shape, "channel count mismatch");
  if (w.dim(2) != w.dim(3)) shape_error("conv2d", x.shape, w.shape, "kernel must be square");
  if (b.rank() != 1 || b.dim(0) != w.dim(0)) shape_error("conv2d", w.shape, b.shape, "bias length must equal output channels");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: stride must be >= 1 and pad >= 0");
  const std::size_t k = w.dim(2);
  if (x.dim(2) + 2 * pad < k || x.dim(3) + 2 * pad < k)
    shape_error("conv2d", x.shape, w.shape, "kernel larger than padded input");

  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), k,
             (x.dim(2) + 2 * pad - k) / stride + 1, (x.dim(3) + 2 * pad - k) / stride + 1, stride, pad};
  const std::size_t ckk = g.c * k * k, p = g.oh * g.ow;

  Tensor<T> out = Tensor<T>::zeros({g.n, g.o, g.oh, g.ow});
  std::vector<T> cols(ckk * p);
  CMapMat<T> wm(w.data.data(), g.o, ckk);
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(x.data.data() + n * g.c * g.h * g.w, g, cols.data());
    MapMat<T> om(out.data.data() + n * g.o * p, g.o, p);
    om.noalias() = wm * CMapMat<T>(cols.data(), ckk, p);
    for (std::size_t o = 0; o < g.o; ++o) om.row(o).array() += b.data[o];
  }

  return push("conv2d", {xv, wv, bv}, std::move(out), [g](const BackwardCtx& ctx) {
    const std::size_t ckk = g.c * g.k * g.k, p = g.oh * g.ow;
    const auto& x = *ctx.in[0];
    CMapMat<T> wm(ctx.in[1]->data.data(), g.o, ckk);
    std::vector<T> cols(ckk * p);
    for (std::size_t n = 0; n < g.n; ++n) {
      CMapMat<T> go(ctx.grad_out.data() + n * g.o * p, g.o, p);
      if (ctx.grad_in[1]) {
        im2col(x.data.data() + n * g.c * g.h * g.w, g, cols.data());
        MapMat<T> dw(ctx.grad_in[1]->data(), g.o, ckk);
        dw.noalias() += go * CMapMat<T>(cols.data(), ckk, p).transpose();
      }
      if (ctx.grad_in[2]) {
        auto& db = *ctx.grad_in[2];
        for (std::size_t o = 0; o < g.o; ++o) db[o] += go.row(o).sum();
      }
      if (ctx.grad_in[0]) {
        MapMat<T> dcols(cols.data(), ckk, p);
        dcols.noalias() = wm.transpose() * go;
        col2im_add(cols.data(), g, ctx.grad_in[0]->data() + n * g.c * g.h * g.w);
      }
    }
  });
}

template <class T>
Var Graph<T>::dense(Var xv, Var wv, Var bv) {
  const auto& x = value(xv);
  const auto& w = value(wv);
  const auto& b = value(bv);
  if (x.rank() != 2 || w.rank() != 2) shape_error("dense", x.shape, w.shape, "input and weight must be rank 2");
  if (x.dim(1) != w.dim(0)) shape_error("dense", x.shape, w.shape, "inner dimensions differ");
  if (b.rank() != 1 || b.dim(0) != w.dim(1)) shape_error("dense", w.shape, b.shape, "bias length must equal output width");
  const std::size_t n = x.dim(0), d = x.dim(1), m = w.dim(1);
  Tensor<T> out = Tensor<T>::zeros({n, m});
  // Row by row so each output row is independent of the batch composition.
  CMapMat<T> wm(w.data.data(), d, m);
  for (std::size_t i = 0; i < n; ++i) {
    MapMat<T> orow(out.data.data() + i * m, 1, m);
    orow.noalias() = CMapMat<T>(x.data.data() + i * d, 1, d) * wm;
    for (std::size_t j = 0; j < m; ++j) orow(0, j) += b.data[j];
  }
  return push("dense", {xv, wv, bv}, std::move(out), [n, d, m](const BackwardCtx& ctx) {
    CMapMat<T> go(ctx.grad_out.data(), n, m);
    CMapMat<T> xm(ctx.in[0]->data.data(), n, d);
    CMapMat<T> wm(ctx.in[1]->data.data(), d, m);
    if (ctx.grad_in[0]) MapMat<T>(ctx.grad_in[0]->data(), n, d).noalias() += go * wm.transpose();
    if (ctx.grad_in[1]) MapMat<T>(ctx.grad_in[1]->data(), d, m).noalias() += xm.transpose() * go;
    if (ctx.grad_in[2]) {
      auto& db = *ctx.grad_in[2];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) db[j] += go(i, j);
    }
  });
}

template <class T>
Var Graph<T>::relu(Var xv) {
  Tensor<T> out = value(xv);
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return push("relu", {xv}, std::move(out), [](const BackwardCtx& ctx) {
    if (!ctx.grad_in[0]) return;
    const auto& x = ctx.in[0]->data;
    auto& gx = *ctx.grad_in[0];
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x[i] > T(0)) gx[i] += ctx.grad_out[i];
  });
}

template <class T>
Var Graph<T>::pool2d(Var xv, PoolKind kind, int window, int stride) {
  const auto& x = value(xv);
  if (x.rank() != 4) throw std::invalid_argument("pool2d: input must be NCHW, got " + shape_str(x.shape));
  if (window < 1 || stride < 1) throw std::invalid_argument("pool2d: window and stride must be >= 1");
  const std::size_t win = window, st = stride;
  if (win > x.dim(2) || win > x.dim(3))
    throw std::invalid_argument("pool2d: window " + std::to_string(window) + " larger than input " + shape_str(x.shape));
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h - win) / st + 1, ow = (w - win) / st + 1;
  Tensor<T> out = Tensor<T>::zeros({n, c, oh, ow});
  // Source index per output for max pooling (first maximum wins).
  std::vector<std::size_t> argmax;
  if (kind == PoolKind::max) argmax.resize(out.size());
  const T inv = T(1) / static_cast<T>(win * win);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const T* src = x.data.data() + nc * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const std::size_t oi = (nc * oh + oy) * ow + ox;
        if (kind == PoolKind::max) {
          std::size_t best = (oy * st) * w + ox * st;
          for (std::size_t dy = 0; dy < win; ++dy)
            for (std::size_t dx = 0; dx < win; ++dx) {
              const std::size_t si = (oy * st + dy) * w + ox * st + dx;
              if (src[si] > src[best]) best = si;
            }
          out.data[oi] = src[best];
          argmax[oi] = nc * h * w + best;
        } else {
          double acc = 0;
          for (std::size_t dy = 0; dy < win; ++dy)
            for (std::size_t dx = 0; dx < win; ++dx) acc += src[(oy * st + dy) * w + ox * st + dx];
          out.data[oi] = static_cast<T>(acc / static_cast<double>(win * win));
        }
      }
    }
  }
  return push(kind == PoolKind::max ? "max_pool" : "avg_pool", {xv}, std::move(out),
              [kind, argmax = std::move(argmax), n, c, h, w, oh, ow, win, st, inv](const BackwardCtx& ctx) {
                if (!ctx.grad_in[0]) return;
                auto& gx = *ctx.grad_in[0];
                if (kind == PoolKind::max) {
                  for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += ctx.grad_out[i];
                  return;
                }
                for (std::size_t nc = 0; nc < n * c; ++nc)
                  for (std::size_t oy = 0; oy < oh; ++oy)
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                      const T gv = ctx.grad_out[(nc * oh + oy) * ow + ox] * inv;
                      for (std::size_t dy = 0; dy < win; ++dy)
                        for (std::size_t dx = 0; dx < win; ++dx)
                          gx[nc * h * w + (oy * st + dy) * w + ox * st + dx] += gv;
                    }
              });
}

template <class T>
Var Graph<T>::global_avg_pool(Var xv) {
  const auto& x = value(xv);
  if (x.rank() != 4) throw std::invalid_argument("global_avg_pool: input must be NCHW, got " + shape_str(x.shape));
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out = Tensor<T>::zeros({n, c});
  const T inv = T(1) / static_cast<T>(hw);
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0;
    for (std::size_t j = 0; j < hw; ++j) acc += x.data[i * hw + j];
    out.data[i] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return push("global_avg_pool", {xv}, std::move(out), [n, c, hw, inv](const BackwardCtx& ctx) {
    if (!ctx.grad_in[0]) return;
    auto& gx = *ctx.grad_in[0];
    for (std::size_t i = 0; i < n * c; ++i) {
      const T gv = ctx.grad_out[i] * inv;
      for (std::size_t j = 0; j < hw; ++j) gx[i * hw + j] += gv;
    }
  });
}

template <class T>
Var Graph<T>::reshape(Var xv, Shape shape) {
  const auto& x = value(xv);
  if (numel(shape) != x.size()) shape_error("reshape", x.shape, shape, "element count differs");
  Tensor<T> out(std::move(shape), x.data);
  return push("reshape", {xv}, std::move(out), [](const BackwardCtx& ctx) {
    if (!ctx.grad_in[0]) return;
    auto& gx = *ctx.grad_in[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += ctx.grad_out[i];
  });
}

template <class T>
Var Graph<T>::scale(Var xv, T factor) {
  Tensor<T> out = value(xv);
  for (auto& v : out.data) v *= factor;
  return push("scale", {xv}, std::move(out), [factor](const BackwardCtx& ctx) {
    if (!ctx.grad_in[0]) return;
    auto& gx = *ctx.grad_in[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * ctx.grad_out[i];
  });
}

template <class T>
Var Graph<T>::add(Var a, Var b) {
  return axpby(T(1), a, T(1), b);
}

template <class T>
Var Graph<T>::axpby(T alpha, Var av, T beta, Var bv) {
  const auto& a = value(av);
  const auto& b = value(bv);
  if (a.shape != b.shape) shape_error("axpby", a.shape, b.shape, "shapes differ");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = alpha * a.data[i] + beta * b.data[i];
  return push("axpby", {av, bv}, std::move(out), [alpha, beta](const BackwardCtx& ctx) {
    if (ctx.grad_in[0]) {
      auto& g = *ctx.grad_in[0];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += alpha * ctx.grad_out[i];
    }
    if (ctx.grad_in[1]) {
      auto& g = *ctx.grad_in[1];
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += beta * ctx.grad_out[i];
    }
  });
}

template <class T>
Var Graph<T>::mul(Var av, Var bv) {
  const auto& a = value(av);
  const auto& b = value(bv);
  if (a.shape != b.shape) shape_error("mul", a.shape, b.shape, "shapes differ");
  Tensor<T> out = Tensor<T>::zeros(a.shape);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] * b.data[i];
  return push("mul", {av, bv}, std::move(out), [](const BackwardCtx& ctx) {
    const auto& a = ctx.in[0]->data;
    const auto& b = ctx.in[1]->data;
    if (ctx.grad_in[0])
      for (std::size_t i = 0; i < a.size(); ++i) (*ctx.grad_in[0])[i] += b[i] * ctx.grad_out[i];
    if (ctx.grad_in[1])
      for (std::size_t i = 0; i < a.size(); ++i) (*ctx.grad_in[1])[i] += a[i] * ctx.grad_out[i];
  });
}

template <class T>
Var Graph<T>::sum(Var xv) {
  const auto& x = value(xv);
  double acc = 0;
  for (auto v : x.data) acc += v;
  return push("sum", {xv}, Tensor<T>({1}, {static_cast<T>(acc)}), [](const BackwardCtx& ctx) {
    if (!ctx.grad_in[0]) return;
    for (auto& g : *ctx.grad_in[0]) g += ctx.grad_out[0];
  });
}

template <class T>
Var Graph<T>::sum_squares(Var xv) {
  const auto& x = value(xv);
  double acc = 0;
  for (auto v : x.data) acc += static_cast<double>(v) * v;
  return push("sum_squares", {xv}, Tensor<T>({1}, {static_cast<T>(acc)}), [](const BackwardCtx& ctx) {
    if (!ctx.grad_in[0]) return;
    const auto& x = ctx.in[0]->data;
    auto& gx = *ctx.grad_in[0];
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += T(2) * x[i] * ctx.grad_out[0];
  });
}

template <class T>
Var Graph<T>::cross_entropy(Var logits, std::span<const int> labels) {
  const auto& z = value(logits);
  if (z.rank() != 2) throw std::invalid_argument("cross_entropy: logits must be N×C, got " + shape_str(z.shape));
  const std::size_t n = z.dim(0), c = z.dim(1);
  if (labels.size() != n)
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " rows");
  std::vector<T> probs(n * c);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    const T* row = z.data.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double se = 0;
    for (std::size_t j = 0; j < c; ++j) se += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / se);
    total += std::log(se) + mx - static_cast<double>(row[y]);
  }
  std::vector<int> ys(labels.begin(), labels.end());
  return push("cross_entropy", {logits}, Tensor<T>({1}, {static_cast<T>(total / static_cast<double>(n))}),
              [probs = std::move(probs), ys = std::move(ys), n, c](const BackwardCtx& ctx) {
                if (!ctx.grad_in[0]) return;
                auto& gz = *ctx.grad_in[0];
                const T s = ctx.grad_out[0] / static_cast<T>(n);
                for (std::size_t i = 0; i < n; ++i)
                  for (std::size_t j = 0; j < c; ++j)
                    gz[i * c + j] += s * (probs[i * c + j] - (static_cast<int>(j) == ys[i] ? T(1) : T(0)));
              });
}

template <class T>
Var Graph<T>::gather(Var xv, Shape out_shape, std::vector<std::ptrdiff_t> index) {
  const auto& x = value(xv);
  if (index.size() != numel(out_shape))
    throw std::invalid_argument("gather: index length does not match output shape " + shape_str(out_shape));
  Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto src = index[i];
    if (src >= static_cast<std::ptrdiff_t>(x.size())) throw std::out_of_range("gather: index beyond input");
    out.data[i] = src < 0 ? T(0) : x.data[src];
  }
  return push("gather", {xv}, std::move(out), [index = std::move(index)](const BackwardCtx& ctx) {
    if (!ctx.grad_in[0]) return;
    auto& gx = *ctx.grad_in[0];
    for (std::size_t i = 0; i < index.size(); ++i)
      if (index[i] >= 0) gx[index[i]] += ctx.grad_out[i];
  });
}

template <class T>
Var Graph<T>::custom(std::string op, std::vector<Var> inputs, Tensor<T> value, BackwardFn backward) {
  return push(std::move(op), std::move(inputs), std::move(value), std::move(backward));
}

template class Graph<float>;
template class Graph<double>;

}  // namespace svda
