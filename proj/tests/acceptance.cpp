// Acceptance run: trains the toy models from scratch and prints one PASS/FAIL
// line per criterion. Exit status is nonzero if any line fails.

#include <Eigen/Eigenvalues>
#include <Eigen/QR>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "oracles.hpp"
#include "svda/analysis.hpp"
#include "svda/grad_check.hpp"
#include "svda/harness.hpp"
#include "tempdir.hpp"

using namespace svda;
using namespace svda::harness;
using spectral::Matrix;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;
std::string only;

using Outcome = std::pair<bool, std::string>;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << " " << name << ": " << detail << std::endl;
  failures += !pass;
}

/// Runs a criterion; an exception counts as a failure with its message.
void criterion(const std::string& name, const std::function<Outcome()>& body) {
  if (!only.empty() && name != only) return;
  try {
    const auto [pass, detail] = body();
    report(name, pass, detail);
  } catch (const std::exception& e) {
    report(name, false, std::string("exception: ") + e.what());
  }
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---- autodiff -------------------------------------------------------------

template <class T>
GradCheckOptions grad_opts() {
  const bool f32 = std::is_same_v<T, float>;
  GradCheckOptions o;
  o.eps = f32 ? 3e-2 : 1e-6;
  o.tol = f32 ? 1e-3 : 1e-5;
  o.abs_floor = f32 ? 1e-4 : 1e-9;
  o.rel_floor = f32 ? 1e-2 : 0.0;
  o.kink_tol = 2 * o.tol;
  o.samples = 20;
  return o;
}

template <class T>
struct GradSuite {
  int passed = 0, total = 0;
  double worst = 0;
  std::string failed;

  void check(const std::string& what, const ScalarFn<T>& fn, const Tensor<T>& point, GradCheckOptions o) {
    o.seed = static_cast<std::uint64_t>(total);
    const auto rep = grad_check(fn, point, o);
    ++total;
    worst = std::max(worst, rep.max_rel_err);
    const auto wanted = std::min(o.samples, point.size() - rep.skipped_kinks);
    if (rep.pass && rep.checked == wanted)
      ++passed;
    else
      failed += " " + what + "(rel " + fmt("%.1e", rep.max_rel_err) + ", " + std::to_string(rep.checked) + " checked, " +
                std::to_string(rep.skipped_kinks) + " kinks)";
  }

  // 32-bit backward against central differences taken in 64-bit on the same function
  void check_vs_f64(const std::string& what, const ScalarFn<float>& fn32, const ScalarFn<double>& fn64,
                    const Tensor<float>& point, const GradCheckOptions& o) {
    ++total;
    std::vector<float> analytic;
    {
      Graph<float> g;
      Tensor<float> p = point;
      p.requires_grad = true;
      Var x = g.leaf(std::move(p));
      g.backward(fn32(g, x));
      analytic = g.grad(x);
    }
    Tensor<double> p64 = Tensor<double>::zeros(point.shape);
    for (std::size_t i = 0; i < point.size(); ++i) p64.data[i] = point.data[i];
    auto eval = [&](const Tensor<double>& at) {
      Graph<double> g;
      return g.value(fn64(g, g.leaf(at))).data[0];
    };
    double gmax = 0;
    for (float v : analytic) gmax = std::max(gmax, std::abs(static_cast<double>(v)));
    const double floor = std::max(o.abs_floor, o.rel_floor * gmax), h = 1e-3;
    const double f0 = eval(p64);
    std::vector<std::size_t> order(point.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(static_cast<std::uint64_t>(total), 1);
    std::size_t checked = 0, kinks = 0;
    double err = 0;
    for (std::size_t pos = 0; pos < order.size() && checked < o.samples; ++pos) {
      std::swap(order[pos], order[static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(pos),
                                                                            static_cast<std::int64_t>(order.size() - 1)))]);
      const std::size_t i = order[pos];
      auto at = [&](double d) {
        auto q = p64;
        q.data[i] += d;
        return eval(q);
      };
      const double fp = at(h), fm = at(-h), fp2 = at(h / 2), fm2 = at(-h / 2);
      const double right = (fp - f0) / h, left = (f0 - fm) / h;
      const double asym = (right - left) - 2 * ((fp2 - f0) / (h / 2) - (f0 - fm2) / (h / 2));
      if (std::abs(asym) > 2e-5 * std::max({std::abs(right), std::abs(left), floor})) {
        ++kinks;
        continue;
      }
      const double numeric = (fp - fm) / (2 * h), a = analytic[i];
      err = std::max(err, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
      ++checked;
    }
    worst = std::max(worst, err);
    if (err <= o.tol && checked == std::min(o.samples, point.size() - kinks))
      ++passed;
    else
      failed += " " + what + "(rel " + fmt("%.1e", err) + ", " + std::to_string(checked) + " checked, " +
                std::to_string(kinks) + " kinks)";
  }

  void run(const nn::LayerGraph& cnn) {
    const auto o = grad_opts<T>();
    Rng rng(77);
    auto x4 = oracle::random_tensor<T>({2, 3, 6, 6}, rng);
    auto w = oracle::random_tensor<T>({4, 3, 3, 3}, rng, -0.5, 0.5);
    auto b = oracle::random_tensor<T>({4}, rng);
    auto probe = oracle::random_tensor<T>({2, 4, 3, 3}, rng);
    auto probe4 = oracle::random_tensor<T>({2, 4, 4, 4}, rng);
    auto probe_x = oracle::random_tensor<T>({2, 3, 6, 6}, rng);
    auto weighted = [](Graph<T>& g, Var v, const Tensor<T>& pr) { return g.sum(g.mul(v, g.constant(pr))); };
    const std::vector<int> two{0, 2};

    check("conv2d.x", [&](Graph<T>& g, Var x) { return weighted(g, g.conv2d(x, g.constant(w), g.constant(b), 2, 1), probe); }, x4, o);
    check("conv2d.w", [&](Graph<T>& g, Var v) { return weighted(g, g.conv2d(g.constant(x4), v, g.constant(b), 2, 1), probe); }, w, o);
    check("conv2d.b", [&](Graph<T>& g, Var v) { return weighted(g, g.conv2d(g.constant(x4), g.constant(w), v, 2, 1), probe); }, b, o);
    check("relu", [&](Graph<T>& g, Var x) { return weighted(g, g.relu(x), probe_x); }, x4, o);
    check("maxpool", [&](Graph<T>& g, Var x) {
      return weighted(g, g.pool2d(g.conv2d(x, g.constant(w), g.constant(b), 1, 1), PoolKind::max, 2, 2), probe);
    }, x4, o);
    check("avgpool", [&](Graph<T>& g, Var x) {
      return weighted(g, g.pool2d(g.conv2d(x, g.constant(w), g.constant(b), 1, 1), PoolKind::avg, 3, 1), probe4);
    }, x4, o);
    check("global_avg_pool+cross_entropy", [&](Graph<T>& g, Var x) { return g.cross_entropy(g.global_avg_pool(x), two); }, x4, o);
    auto wd = oracle::random_tensor<T>({108, 5}, rng, -0.2, 0.2);
    auto bd = oracle::random_tensor<T>({5}, rng);
    check("dense.x+reshape+scale+axpby", [&](Graph<T>& g, Var x) {
      Var z = g.dense(g.reshape(g.scale(x, T(1.5)), {2, 108}), g.constant(wd), g.constant(bd));
      return g.cross_entropy(g.axpby(T(0.3), z, T(0.7), g.relu(z)), std::vector<int>{4, 1});
    }, x4, o);
    auto flat = oracle::random_tensor<T>({2, 108}, rng);
    check("dense.w", [&](Graph<T>& g, Var v) {
      return g.cross_entropy(g.dense(g.constant(flat), v, g.constant(bd)), std::vector<int>{4, 1});
    }, wd, o);
    check("add+mul+sum_squares", [&](Graph<T>& g, Var x) {
      return g.sum_squares(g.add(g.mul(x, g.constant(probe_x)), x));
    }, x4, o);
    std::vector<std::ptrdiff_t> idx(50);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = (i % 7 == 0) ? -1 : static_cast<std::ptrdiff_t>((i * 13) % x4.size());
    auto pr = oracle::random_tensor<T>({50}, rng);
    check("gather", [&](Graph<T>& g, Var x) { return weighted(g, g.gather(x, {50}, idx), pr); }, x4, o);

    // svd_truncate on a feature with well separated singular values
    Matrix r3(3, 3), r8(8, 8);
    for (Eigen::Index i = 0; i < r3.size(); ++i) r3.data()[i] = rng.uniform(-1, 1);
    for (Eigen::Index i = 0; i < r8.size(); ++i) r8.data()[i] = rng.uniform(-1, 1);
    Eigen::HouseholderQR<Matrix> q1(r3), q2(r8);
    const Matrix xs = Matrix(q1.householderQ()) * Eigen::Vector3d(4.0, 2.5, 1.0).asDiagonal() *
                      Matrix(q2.householderQ()).leftCols(3).transpose();
    Tensor<T> feat = Tensor<T>::zeros({1, 3, 2, 4});
    for (std::size_t i = 0; i < feat.size(); ++i) feat.data[i] = static_cast<T>(xs(i / 8, i % 8));
    auto prf = oracle::random_tensor<T>({1, 3, 2, 4}, rng);
    auto so = o;
    if constexpr (std::is_same_v<T, float>) so.eps = 1e-2;
    for (std::size_t k : {1, 2})
      check("svd_truncate.k" + std::to_string(k), [&, k](Graph<T>& g, Var x) {
        return weighted(g, spectral::svd_truncate(g, x, {k, spectral::GradMode::full, 1e-6}), prf);
      }, feat, so);

    // a full toy CNN on a raw-pixel input, with and without the SVD hook
    auto img = oracle::random_tensor<T>({1, 3, 32, 32}, rng, 0, 255);
    const std::vector<int> label{3};
    auto plain = [&]<class U>(Graph<U>& g, Var x) {
      nn::Bound<U> bnd(cnn, g);
      return g.cross_entropy(bnd.full(x), label);
    };
    auto hooked = [&]<class U>(Graph<U>& g, Var x) {
      nn::Bound<U> bnd(cnn, g);
      return attack::attack_loss(bnd, x, label, attack::SvdHook{});
    };
    if constexpr (std::is_same_v<T, float>) {
      auto f32 = [](auto& fn) { return ScalarFn<float>([&fn](Graph<float>& g, Var x) { return fn(g, x); }); };
      auto f64 = [](auto& fn) { return ScalarFn<double>([&fn](Graph<double>& g, Var x) { return fn(g, x); }); };
      check_vs_f64("cnn", f32(plain), f64(plain), img, o);
      check_vs_f64("cnn+svd_hook", f32(hooked), f64(hooked), img, o);
    } else {
      auto co = o;
      co.eps = 1e-3;
      check("cnn", [&](Graph<T>& g, Var x) { return plain(g, x); }, img, co);
      check("cnn+svd_hook", [&](Graph<T>& g, Var x) { return hooked(g, x); }, img, co);
    }
  }
};

// ---- spectral -------------------------------------------------------------

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  return m;
}

Matrix gapped(Eigen::Index r, Eigen::Index c, Rng& rng) {
  const auto m = std::min(r, c);
  Eigen::VectorXd s(m);
  double v = rng.uniform(0.2, 1.0);
  for (Eigen::Index i = m - 1; i >= 0; --i) {
    s(i) = v;
    v += rng.uniform(0.5, 1.5);
  }
  Eigen::HouseholderQR<Matrix> q1(random_matrix(r, r, rng)), q2(random_matrix(c, c, rng));
  return Matrix(q1.householderQ()).leftCols(m) * s.asDiagonal() * Matrix(q2.householderQ()).leftCols(m).transpose();
}

double inner_topk(const Matrix& x, Eigen::Index k, const Matrix& g) {
  return (g.array() * spectral::topk_reconstruct(spectral::svd(x), k).array()).sum();
}

// ---- pipeline -------------------------------------------------------------

RunConfig pipeline_config(const fs::path& out, std::uint64_t seed) {
  RunConfig c;
  c.set("out", out.string());
  c.set("seed", std::to_string(seed));
  return c;
}

struct Run {
  RunConfig cfg;
  std::vector<nn::TrainResult> trained;
  std::vector<AttackOutcome> attacks;
  ResultsTable results;
};

Run full_run(const fs::path& out, std::uint64_t seed) {
  Run r{pipeline_config(out, seed), {}, {}, {}};
  std::ostringstream log;
  const auto t0 = Clock::now();
  cmd_gen_data(r.cfg, log);
  r.trained = cmd_train(r.cfg, log);
  const auto t1 = Clock::now();
  r.attacks = cmd_attack(r.cfg, log);
  r.results = cmd_eval(r.cfg, log);
  std::cout << "  seed " << seed << ": trained in " << fmt("%.1f", std::chrono::duration<double>(t1 - t0).count())
            << " s, attacked and evaluated in " << fmt("%.1f", since(t1)) << " s" << std::endl;
  return r;
}

double rate(const ResultsTable& t, const std::string& s, const std::string& d, bool svd) {
  for (const auto& r : t.rows)
    if (r.source == s && r.target == d && r.svd == svd) return r.success_rate;
  throw std::runtime_error("no result for " + s + "->" + d);
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    files[fs::relative(e.path(), root).string()] = ss.str();
  }
  return files;
}

}  // namespace

/// An optional argument names the single criterion to run.
int main(int argc, char** argv) {
  if (argc > 1) only = argv[1];
  const auto start = Clock::now();
  TempDir dir("acceptance");

  criterion("autodiff", []() -> Outcome {
    const auto t0 = Clock::now();
    const auto cnn = nn::build_model("convnet_a", kShapeClasses, 5);
    GradSuite<float> f;
    GradSuite<double> d;
    f.run(cnn);
    d.run(cnn);
    const double secs = since(t0);
    const bool ok = f.passed == f.total && d.passed == d.total && secs < 60;
    return Outcome{ok, std::to_string(f.passed) + "/" + std::to_string(f.total) + " checks at 32-bit (worst rel " +
                             fmt("%.2e", f.worst) + "), " + std::to_string(d.passed) + "/" + std::to_string(d.total) +
                             " at 64-bit (worst rel " + fmt("%.2e", d.worst) + "), 20 coordinates each, " +
                             fmt("%.1f", secs) + " s" + (f.failed.empty() && d.failed.empty() ? "" : "; failed:" + f.failed + d.failed)};
  });

  criterion("svd suite", []() -> Outcome {
    const auto t0 = Clock::now();
    Rng rng(2024);
    int bad = 0, competitors = 0;
    double worst_orth = 0, worst_rec = 0;
    for (int t = 0; t < 200; ++t) {
      const auto r = rng.uniform_int(1, 16), c = rng.uniform_int(1, 48);
      Matrix x = random_matrix(r, c, rng);
      if (t % 10 == 0 && std::min(r, c) > 1) x = random_matrix(r, 1, rng) * random_matrix(1, c, rng);
      const auto d = spectral::svd(x);
      const auto m = d.rank_bound();
      const double orth = std::max((d.U.transpose() * d.U - Matrix::Identity(m, m)).norm(),
                                   (d.V.transpose() * d.V - Matrix::Identity(m, m)).norm());
      const double rec = (d.U * d.S.asDiagonal() * d.V.transpose() - x).norm() / (1 + x.norm());
      worst_orth = std::max(worst_orth, orth);
      worst_rec = std::max(worst_rec, rec);
      bool ok = orth <= 1e-4 && rec <= 1e-4 && d.S.minCoeff() >= 0;
      for (Eigen::Index i = 1; i < m; ++i) ok = ok && d.S(i) <= d.S(i - 1);
      double prev = std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 1; k <= m; ++k) {
        const double err = (x - spectral::topk_reconstruct(d, k)).norm();
        ok = ok && err <= prev + 1e-9;
        prev = err;
        for (int j = 0; j < 50; ++j, ++competitors)
          ok = ok && err <= (x - random_matrix(r, k, rng) * random_matrix(k, c, rng)).norm() + 1e-9;
      }
      ok = ok && (x - spectral::topk_reconstruct(d, m)).norm() <= 1e-4;
      bad += !ok;
    }
    const double secs = since(t0);
    return Outcome{bad == 0 && secs < 60, std::to_string(200 - bad) + "/200 matrices meet every invariant, " +
                                                std::to_string(competitors) + " rank-k competitors, max orth err " +
                                                fmt("%.1e", worst_orth) + ", max rel recon err " +
                                                fmt("%.1e", worst_rec) + ", " + fmt("%.1f", secs) + " s"};
  });

  criterion("truncation adjoint", []() -> Outcome {
    Rng rng(7);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
      const Matrix x = gapped(6, 10, rng);
      const auto k = rng.uniform_int(1, 5);
      const Matrix g = random_matrix(6, 10, rng);
      const Matrix an = spectral::truncation_backward(spectral::svd(x), k, g, 1e-6);
      Matrix fd(6, 10);
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        Matrix xp = x, xm = x;
        xp.data()[i] += h;
        xm.data()[i] -= h;
        fd.data()[i] = (inner_topk(xp, k, g) - inner_topk(xm, k, g)) / (2 * h);
      }
      worst = std::max(worst, (an - fd).norm() / std::max(fd.norm(), 1e-12));
    }
    Matrix d31(2, 2);
    d31 << 3, 0, 0, 1;
    const auto dd = spectral::svd(d31);
    const Matrix up = dd.U.col(0) * dd.V.col(0).transpose();
    const Matrix ds1 = spectral::truncation_backward(dd, 1, up, 1e-6);
    Matrix fd(2, 2);
    for (Eigen::Index i = 0; i < 4; ++i) {
      Matrix xp = d31, xm = d31;
      xp.data()[i] += 1e-6;
      xm.data()[i] -= 1e-6;
      fd.data()[i] = (spectral::svd(xp).S(0) - spectral::svd(xm).S(0)) / 2e-6;
    }
    Matrix e(2, 2);
    e << 1, 0, 0, 0;
    const double d1 = std::max((ds1 - e).cwiseAbs().maxCoeff(), (fd - e).cwiseAbs().maxCoeff());
    return Outcome{worst <= 1e-3 && d1 <= 1e-5, "100 gapped 6x10 matrices, worst rel err " + fmt("%.2e", worst) +
                                                       "; ds1/dX at diag(3,1) off by " + fmt("%.1e", d1)};
  });

  std::optional<Run> main_run;
  bool main_failed = false;
  auto need_main = [&]() -> const Run& {
    if (!main_run && !main_failed) {
      std::cout << "  training and attacking seed 0 (3 models, 500 images)" << std::endl;
      try {
        main_run = full_run(dir / "seed0", 0);
      } catch (const std::exception& e) {
        main_failed = true;
        std::cout << "  seed 0 pipeline failed: " << e.what() << std::endl;
      }
    }
    if (!main_run) throw std::runtime_error("seed 0 pipeline unavailable");
    return *main_run;
  };

  criterion("degeneracy identities", [&]() -> Outcome {
    const auto& run = need_main();
    const auto set = attack_set(run.cfg);
    const auto images = slice_batch(set.images, 0, 20);
    const std::vector<int> labels(set.labels.begin(), set.labels.begin() + 20);
    attack::RunOptions opt;
    opt.record_trajectory = true;
    double worst_beta = 0, worst_full = 0;
    for (const char* arch : nn::kArchs) {
      const auto m = nn::load_checkpoint(Paths(run.cfg).checkpoint(arch));
      auto base_cfg = attack_config(run.cfg, false);
      const auto base = attack::run_attack(m, images, labels, base_cfg, opt);
      auto b1 = attack_config(run.cfg, true);
      b1.hook->beta = 1.0;
      auto kf = attack_config(run.cfg, true);
      kf.hook->k = 0;
      const auto tb = attack::run_attack(m, images, labels, b1, opt);
      const auto tk = attack::run_attack(m, images, labels, kf, opt);
      if (base.trajectory.size() != 10 || tb.trajectory.size() != 10 || tk.trajectory.size() != 10)
        throw std::runtime_error("expected 10 recorded steps");
      for (std::size_t s = 0; s < 10; ++s)
        for (std::size_t i = 0; i < base.trajectory[s].size(); ++i) {
          worst_beta = std::max(worst_beta, double(std::abs(base.trajectory[s].data[i] - tb.trajectory[s].data[i])));
          worst_full = std::max(worst_full, double(std::abs(base.trajectory[s].data[i] - tk.trajectory[s].data[i])));
        }
    }
    return Outcome{worst_beta <= 1e-4 && worst_full <= 1e-4,
                     "3 trained models x 20 images x 10 steps, max deviation beta=1 " + fmt("%.1e", worst_beta) +
                         ", k=full " + fmt("%.1e", worst_full)};
  });

  criterion("threat model", [&]() -> Outcome {
    const auto& run = need_main();
    const auto set = attack_set(run.cfg);
    const auto m = nn::load_checkpoint(Paths(run.cfg).checkpoint("convnet_c"));
    std::size_t checked = 0, violations = 0, configs = 0;
    auto check = [&](const attack::AdversarialBatch& b, double eps) {
      for (std::size_t i = 0; i < b.adv.size(); ++i) {
        const float v = b.adv.data[i];
        violations += !(v >= 0.0f && v <= 255.0f && std::abs(v - b.clean.data[i]) <= eps + 1e-4);
      }
      checked += b.size();
    };
    for (std::uint64_t seed : {0, 1, 2})
      for (const char* method : {"ifgsm", "mifgsm", "nifgsm"})
        for (const char* tf : {"none", "di+ti", "si", "vt", "all"})
          for (bool svd : {false, true}) {
            RunConfig c = run.cfg;
            c.set("seed", std::to_string(seed));
            c.set("method", method);
            const std::string t = tf;
            const bool heavy = t == "vt" || t == "all";
            if (heavy && std::string(method) != "mifgsm") continue;
            c.set("di", t == "di+ti" || t == "all" ? "true" : "false");
            c.set("ti_len", t == "di+ti" || t == "all" ? "7" : "0");
            c.set("si_m", t == "si" || t == "all" ? "3" : "0");
            c.set("vt", heavy ? "true" : "false");
            c.set("vt_n", t == "all" ? "5" : "20");
            c.set("epsilon", seed == 2 ? "8" : "16");
            const auto ac = attack_config(c, svd);
            const std::size_t n = heavy ? 4 : 10;
            const auto b = attack::run_attack(m, slice_batch(set.images, 10 * seed, n),
                                              std::vector<int>(set.labels.begin() + 10 * seed,
                                                               set.labels.begin() + 10 * seed + n),
                                              ac);
            check(b, ac.epsilon);
            ++configs;
          }
    for (const auto& o : run.attacks) {
      check(attack::load_batch(Paths(run.cfg).batch(o.source, o.variant)), 16.0);
      ++configs;
    }
    return Outcome{violations == 0, std::to_string(checked) + " adversarial images over " + std::to_string(configs) +
                                          " method/transform/seed/hook configs, " + std::to_string(violations) +
                                          " pixel violations"};
  });

  criterion("white-box strength", [&]() -> Outcome {
    const auto& run = need_main();
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < run.trained.size(); ++i) {
      const auto acc = run.trained[i].info.final_test_acc;
      const auto arch = nn::kArchs[i];
      for (const auto& o : run.attacks) {
        if (o.source != arch || o.variant != "off") continue;
        const double sr = success_rate(o.white_box_successes, o.n);
        ok = ok && acc >= 0.9 && sr >= 0.9 && o.n == 500 && o.seconds < 300;
        detail += std::string(detail.empty() ? "" : "; ") + arch + " clean acc " + fmt("%.3f", acc) + ", MI-FGSM success " +
                  fmt("%.3f", sr) + " on " + std::to_string(o.n) + " images in " + fmt("%.1f", o.seconds) + " s";
      }
    }
    return Outcome{ok, detail};
  });

  criterion("directional transfer", [&]() -> Outcome {
    std::vector<const Run*> runs{&need_main()};
    std::vector<Run> extra;
    for (std::uint64_t seed : {1, 2}) extra.push_back(full_run(dir / ("seed" + std::to_string(seed)), seed));
    for (const auto& r : extra) runs.push_back(&r);
    const std::pair<const char*, const char*> pairs[] = {
        {"convnet_a", "convnet_b"}, {"convnet_b", "convnet_c"}, {"convnet_c", "convnet_a"}};
    double with = 0, without = 0;
    std::string cells;
    for (const auto* r : runs)
      for (const auto& [s, t] : pairs) {
        with += rate(r->results, s, t, true);
        without += rate(r->results, s, t, false);
        cells += " " + fmt("%.3f", rate(r->results, s, t, false)) + "/" + fmt("%.3f", rate(r->results, s, t, true));
      }
    with /= 9;
    without /= 9;
    return Outcome{with >= without - 0.02, "mean black-box success without SVD " + fmt("%.4f", without) +
                                                  ", with SVD " + fmt("%.4f", with) + " (improvement " +
                                                  fmt("%+.2f", 100 * (with - without)) + " pp); cells w/o/w:" + cells};
  });

  criterion("ablation shapes", [&]() -> Outcome {
    auto cfg = need_main().cfg;
    cfg.set("n_images", "200");
    cfg.set("sweep_topk", "1,2,5,full");
    std::ostringstream log;
    const auto beta = cmd_sweep(cfg, "beta", log);
    const auto means = beta.means();
    double at0 = -1, best_interior = -1;
    std::string curve;
    for (const auto& [v, m] : means) {
      curve += " " + v + ":" + fmt("%.3f", m);
      if (v == "0") at0 = m;
      if (v != "baseline" && v != "0" && v != "1") best_interior = std::max(best_interior, m);
    }
    const auto topk = cmd_sweep(cfg, "topk", log);
    double worst = 0;
    std::map<std::pair<std::string, std::string>, double> base;
    for (const auto& r : topk.rows)
      if (r.value == "baseline") base[{r.source, r.target}] = r.success_rate;
    std::string kcurve;
    for (const auto& [v, m] : topk.means()) kcurve += " " + v + ":" + fmt("%.3f", m);
    for (const auto& r : topk.rows)
      if (r.value == "full") worst = std::max(worst, std::abs(r.success_rate - base.at({r.source, r.target})));
    return Outcome{at0 >= 0 && best_interior > at0 && worst <= 1e-4,
                     "beta sweep (mean black-box, 200 images)" + curve + "; topk sweep" + kcurve +
                         "; k=full vs baseline max diff " + fmt("%.1e", worst)};
  });

  criterion("cka suite", [&]() -> Outcome {
    Rng rng(11);
    double self = 0, orth = 0, scale = 0;
    for (int t = 0; t < 50; ++t) {
      const Matrix x = random_matrix(20, 8, rng), y = random_matrix(20, 5, rng);
      Eigen::HouseholderQR<Matrix> qr(random_matrix(8, 8, rng));
      const Matrix q = qr.householderQ();
      self = std::max(self, std::abs(analysis::linear_cka(x, x) - 1));
      orth = std::max(orth, std::abs(analysis::linear_cka(x * q, y) - analysis::linear_cka(x, y)));
      scale = std::max(scale, std::abs(analysis::linear_cka(-3.5 * x, 0.2 * y) - analysis::linear_cka(x, y)));
    }
    const auto& run = need_main();
    const auto set = attack_set(run.cfg);
    const auto layers = run.cfg.list("cka_layers");
    bool trend = true;
    std::string detail;
    for (const char* arch : nn::kArchs) {
      const auto m = nn::load_checkpoint(Paths(run.cfg).checkpoint(arch));
      const auto b = attack::load_batch(Paths(run.cfg).batch(arch, "off"));
      const auto preds = nn::predict(m, b.adv);
      std::vector<std::size_t> hit;
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (preds[i] != b.labels[i]) hit.push_back(i);
      std::vector<std::uint32_t> ids;
      Tensor<float> clean = Tensor<float>::zeros({hit.size(), 3, 32, 32}), adv = clean;
      const std::size_t per = 3 * 32 * 32;
      for (std::size_t j = 0; j < hit.size(); ++j) {
        std::copy_n(set.images.data.begin() + hit[j] * per, per, clean.data.begin() + j * per);
        std::copy_n(b.adv.data.begin() + hit[j] * per, per, adv.data.begin() + j * per);
        ids.push_back(b.sample_ids[hit[j]]);
      }
      const auto rep = analysis::cka_layerwise(m, clean, adv, ids, ids, layers);
      trend = trend && rep.rows.back().cka < rep.rows.front().cka;
      detail += std::string("; ") + arch + " (" + std::to_string(hit.size()) + " fooled)";
      for (const auto& r : rep.rows) detail += " " + r.layer + ":" + fmt("%.3f", r.cka);
    }
    std::ostringstream log;
    const auto out = cmd_cka(run.cfg, log);
    double no_svd = 0, svd = 0;
    for (const auto& r : out.crossmodel.rows) {
      if (r.variant == "adv_no_svd") no_svd += r.cka;
      if (r.variant == "adv_svd") svd += r.cka;
    }
    std::cout << "  info: cross-model CKA summed over pairs and layers, adv w/o SVD " << fmt("%.4f", no_svd)
              << ", adv w/ SVD " << fmt("%.4f", svd) << (svd >= no_svd ? " (paper direction)" : " (opposite direction)")
              << std::endl;
    return Outcome{self <= 1e-6 && orth <= 1e-5 && scale <= 1e-5 && trend,
                     "self " + fmt("%.1e", self) + ", orthogonal " + fmt("%.1e", orth) + ", scale " +
                         fmt("%.1e", scale) + detail};
  });

  criterion("reproducibility", [&]() -> Outcome {
    std::map<std::string, std::string> first;
    for (int rep = 0; rep < 2; ++rep) {
      const auto out = dir / ("repro" + std::to_string(rep));
      RunConfig c = pipeline_config(out, 42);
      c.set("n_train", "500");
      c.set("n_test", "100");
      c.set("epochs", "1");
      c.set("n_images", "16");
      c.set("sweep_beta", "0,0.5,1");
      c.set("cam_images", "2");
      c.set("threads", rep == 0 ? "1" : "3");
      std::ostringstream log;
      cmd_gen_data(c, log);
      cmd_train(c, log);
      cmd_attack(c, log);
      cmd_eval(c, log);
      cmd_sweep(c, "beta", log);
      cmd_cka(c, log);
      cmd_cam(c, log);
      auto files = tree(out);
      if (rep == 0) {
        first = std::move(files);
        continue;
      }
      std::size_t same = 0;
      for (const auto& [name, bytes] : files) same += first.count(name) && first.at(name) == bytes;
      return Outcome{same == files.size() && files.size() == first.size() && !files.empty(),
                       std::to_string(same) + "/" + std::to_string(first.size()) +
                           " files byte-identical across two seeded runs (1 and 3 threads) of gen-data, train, attack, "
                           "eval, sweep, cka and cam"};
    }
    return Outcome{false, "unreachable"};
  });

  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << " in "
            << fmt("%.0f", since(start)) << " s" << std::endl;
  return failures == 0 ? 0 : 1;
}
