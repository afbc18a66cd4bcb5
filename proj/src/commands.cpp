#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "svda/container.hpp"
#include "svda/harness.hpp"
#include "svda/image.hpp"

namespace svda::harness {

Paths::Paths(const RunConfig& cfg) : out(cfg.str("out")) {
  if (out.empty()) throw std::invalid_argument("config key 'out' must not be empty");
  auto pick = [&](const char* key, const char* name) {
    const auto& v = cfg.str(key);
    return v.empty() ? out / "data" / name : fs::path(v);
  };
  train_images = pick("train_images", "train-images.svdd");
  train_labels = pick("train_labels", "train-labels.svdl");
  test_images = pick("test_images", "test-images.svdd");
  test_labels = pick("test_labels", "test-labels.svdl");
}

namespace {

std::size_t parse_k(const std::string& s) {
  if (s == "full") return 0;
  std::size_t pos = 0;
  long long v = -1;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
  }
  if (pos != s.size() || v < 1) throw std::invalid_argument("svd_k: expected a positive integer or 'full', got '" + s + "'");
  return static_cast<std::size_t>(v);
}

int threads_of(const RunConfig& cfg) {
  const auto t = cfg.integer("threads");
  if (t < 1) throw std::invalid_argument("threads must be at least 1");
  return static_cast<int>(t);
}

std::vector<std::string> models_of(const RunConfig& cfg, const char* key) {
  auto v = cfg.list(key);
  if (v.empty()) throw std::invalid_argument("config key '" + std::string(key) + "' lists no models");
  return v;
}

/// Loads each checkpoint once.
class ModelCache {
 public:
  explicit ModelCache(const Paths& p) : paths_(p) {}
  const nn::LayerGraph& get(const std::string& arch) {
    auto it = models_.find(arch);
    if (it == models_.end()) it = models_.emplace(arch, nn::load_checkpoint(paths_.checkpoint(arch))).first;
    return it->second;
  }

 private:
  const Paths& paths_;
  std::map<std::string, nn::LayerGraph> models_;
};

void check_compatible(const nn::LayerGraph& m, const Tensor<float>& images) {
  if (images.rank() != 4 || images.dim(1) != m.in_c || images.dim(2) != m.in_h || images.dim(3) != m.in_w)
    throw std::invalid_argument(m.arch + " expects " + std::to_string(m.in_c) + "x" + std::to_string(m.in_h) + "x" +
                                std::to_string(m.in_w) + " images, batch is " + shape_str(images.shape));
}

std::string variant_tag(const std::string& v) { return v == "on" ? "adv_svd" : "adv_no_svd"; }

}  // namespace

attack::AttackConfig attack_config(const RunConfig& cfg, bool svd) {
  attack::AttackConfig c;
  c.method = attack::parse_method(cfg.str("method"));
  c.epsilon = cfg.real("epsilon");
  c.steps = static_cast<int>(cfg.integer("steps"));
  if (!cfg.str("alpha").empty()) c.alpha = cfg.real("alpha");
  c.mu = cfg.real("mu");
  if (cfg.flag("di")) c.transforms.di = attack::DiParams{cfg.real("di_p"), cfg.real("di_min_scale")};
  if (const auto t = cfg.integer("ti_len"); t != 0) c.transforms.ti_len = static_cast<int>(t);
  if (const auto m = cfg.integer("si_m"); m != 0) c.transforms.si_m = static_cast<int>(m);
  if (cfg.flag("vt")) c.transforms.vt = attack::VtParams{cfg.real("vt_beta"), static_cast<int>(cfg.integer("vt_n"))};
  if (svd) {
    attack::SvdHook h;
    h.layer = cfg.str("svd_layer");
    h.k = parse_k(cfg.str("svd_k"));
    h.beta = cfg.real("svd_beta");
    const auto& g = cfg.str("svd_grad");
    if (g == "full")
      h.grad_mode = spectral::GradMode::full;
    else if (g == "detached")
      h.grad_mode = spectral::GradMode::detached;
    else
      throw std::invalid_argument("svd_grad: expected full or detached, got '" + g + "'");
    c.hook = h;
  }
  c.seed = cfg.u64("seed");
  c.validate();
  return c;
}

std::vector<std::string> svd_variants(const RunConfig& cfg) {
  auto v = cfg.list("svd_variants");
  if (v.empty()) throw std::invalid_argument("svd_variants is empty");
  for (const auto& s : v)
    if (s != "off" && s != "on") throw std::invalid_argument("svd_variants: expected off or on, got '" + s + "'");
  return v;
}

AttackSet attack_set(const RunConfig& cfg) {
  const Paths p(cfg);
  const auto test = load_dataset(p.test_images, p.test_labels);
  test.validate(kShapeClasses);
  const auto n = cfg.integer("n_images");
  if (n < 1 || static_cast<std::size_t>(n) > test.n)
    throw std::invalid_argument("n_images must lie in [1, " + std::to_string(test.n) + "], got " + std::to_string(n));
  std::vector<std::size_t> idx(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return {test.images(idx), test.labels_of(idx)};
}

std::size_t count_misclassified(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw std::invalid_argument("count_misclassified: size mismatch");
  std::size_t s = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) s += preds[i] != labels[i];
  return s;
}

std::map<std::string, std::string> parse_echo(const std::string& echo) {
  std::map<std::string, std::string> out;
  std::istringstream in(echo);
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void cmd_gen_data(const RunConfig& cfg, std::ostream& log) {
  const Paths p(cfg);
  const auto seed = cfg.u64("seed");
  const auto n_train = cfg.integer("n_train"), n_test = cfg.integer("n_test");
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("n_train and n_test must be positive");
  // the test split gets its own seed so the two sets never share draws
  const auto train = generate_shapes(seed * 2, static_cast<std::size_t>(n_train), "train");
  const auto test = generate_shapes(seed * 2 + 1, static_cast<std::size_t>(n_test), "test");
  save_images(p.train_images, train);
  save_labels(p.train_labels, train);
  save_images(p.test_images, test);
  save_labels(p.test_labels, test);
  log << "wrote " << train.n << " train and " << test.n << " test images to " << p.train_images.parent_path().string()
      << "\n";
}

std::vector<nn::TrainResult> cmd_train(const RunConfig& cfg, std::ostream& log) {
  const Paths p(cfg);
  const auto train_set = load_dataset(p.train_images, p.train_labels);
  const auto test_set = load_dataset(p.test_images, p.test_labels);
  train_set.validate(kShapeClasses);
  test_set.validate(kShapeClasses);

  nn::TrainOptions opt;
  opt.epochs = static_cast<std::size_t>(cfg.integer("epochs"));
  opt.lr = cfg.real("lr");
  opt.momentum = cfg.real("momentum");
  opt.batch_size = static_cast<std::size_t>(cfg.integer("batch_size"));
  opt.seed = cfg.u64("seed");

  std::vector<nn::TrainResult> results;
  std::string metrics = "arch,epoch,loss,train_acc,test_acc\n";
  for (const auto& arch : models_of(cfg, "archs")) {
    auto model = nn::build_model(arch, kShapeClasses, opt.seed);
    auto r = nn::train(model, train_set, &test_set, opt);
    nn::save_checkpoint(model, r.info, p.checkpoint(arch));
    for (const auto& m : r.metrics)
      metrics += arch + "," + std::to_string(m.epoch) + "," + format_double(m.loss) + "," + format_double(m.train_acc) +
                 "," + format_double(m.test_acc) + "\n";
    log << arch << ": " << model.param_count() << " params, test acc " << r.info.final_test_acc << "\n";
    results.push_back(std::move(r));
  }
  io::write_text_atomic(p.metrics(), metrics);
  return results;
}

std::vector<AttackOutcome> cmd_attack(const RunConfig& cfg, std::ostream& log) {
  const Paths p(cfg);
  const int threads = threads_of(cfg);
  const auto variants = svd_variants(cfg);
  std::vector<attack::AttackConfig> configs;
  for (const auto& v : variants) configs.push_back(attack_config(cfg, v == "on"));
  const auto set = attack_set(cfg);
  ModelCache models(p);

  std::vector<AttackOutcome> outcomes;
  for (const auto& source : models_of(cfg, "sources")) {
    const auto& model = models.get(source);
    check_compatible(model, set.images);
    const auto before = nn::predict(model, set.images, threads);
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      const auto& ac = configs[vi];
      const auto t0 = std::chrono::steady_clock::now();
      const auto batch = attack::run_attack(model, set.images, set.labels, ac, {threads, false, 0});
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
      batch.check_invariants(ac.epsilon);
      const auto after = nn::predict(model, batch.adv, threads);

      const std::string echo = "source=" + source + "\nvariant=" + variants[vi] + "\nattack=" + ac.name() +
                               "\nsvd=" + (ac.hook ? "1" : "0") + "\nsvd_k=" + cfg.str("svd_k") +
                               "\nsvd_beta=" + format_double(cfg.real("svd_beta")) +
                               "\nsvd_layer=" + cfg.str("svd_layer") + "\nepsilon=" + format_double(ac.epsilon) +
                               "\nsteps=" + std::to_string(ac.steps) + "\nalpha=" + format_double(ac.step_size()) +
                               "\nmu=" + format_double(ac.mu) + "\nseed=" + std::to_string(ac.seed) +
                               "\nn=" + std::to_string(batch.size()) + "\n";
      attack::save_batch(p.batch(source, variants[vi]), batch, echo);

      std::string text = "# source=" + source + " attack=" + ac.name() + " svd=" + variants[vi] +
                         " epsilon=" + format_double(ac.epsilon) + " T=" + std::to_string(ac.steps) +
                         " alpha=" + format_double(ac.step_size()) + " mu=" + format_double(ac.mu) +
                         " beta=" + format_double(cfg.real("svd_beta")) + " k=" + cfg.str("svd_k") +
                         " layer=" + cfg.str("svd_layer") + " seed=" + std::to_string(ac.seed) +
                         " n=" + std::to_string(batch.size()) + "\n";
      text += "index,sample_id,label,linf,status,source_pred_before,source_pred_after\n";
      for (std::size_t i = 0; i < batch.size(); ++i)
        text += std::to_string(i) + "," + std::to_string(batch.sample_ids[i]) + "," + std::to_string(batch.labels[i]) +
                "," + format_double(batch.linf[i]) + "," +
                (batch.status[i] == attack::ImageStatus::ok ? "ok" : "non_finite_gradient") + "," +
                std::to_string(before[i]) + "," + std::to_string(after[i]) + "\n";
      io::write_text_atomic(p.attack_log(source, variants[vi]), text);

      AttackOutcome o{source, variants[vi], batch.size(), count_misclassified(after, batch.labels), dt.count()};
      log << source << " " << ac.name() << " svd=" << variants[vi] << ": white-box success "
          << format_double(success_rate(o.white_box_successes, o.n)) << " on " << o.n << " images\n";
      outcomes.push_back(o);
    }
  }
  return outcomes;
}

ResultsTable cmd_eval(const RunConfig& cfg, std::ostream& log) {
  const Paths p(cfg);
  const int threads = threads_of(cfg);
  ModelCache models(p);
  ResultsTable table;
  for (const auto& source : models_of(cfg, "sources"))
    for (const auto& variant : svd_variants(cfg)) {
      std::string echo;
      const auto batch = attack::load_batch(p.batch(source, variant), &echo);
      const auto e = parse_echo(echo);
      for (const auto& target : models_of(cfg, "targets")) {
        const auto& model = models.get(target);
        check_compatible(model, batch.adv);
        const auto preds = nn::predict(model, batch.adv, threads);
        std::string text = "index,sample_id,label,pred,success\n";
        for (std::size_t i = 0; i < preds.size(); ++i)
          text += std::to_string(i) + "," + std::to_string(batch.sample_ids[i]) + "," +
                  std::to_string(batch.labels[i]) + "," + std::to_string(preds[i]) + "," +
                  (preds[i] != batch.labels[i] ? "1" : "0") + "\n";
        io::write_text_atomic(p.eval_log(source, variant, target), text);

        ResultRow r;
        r.source = source;
        r.target = target;
        r.attack = e.at("attack");
        r.svd = e.at("svd") == "1";
        if (r.svd) {
          r.k = parse_k(e.at("svd_k"));
          r.beta = std::stod(e.at("svd_beta"));
          r.layer = e.at("svd_layer");
        }
        r.n = batch.size();
        r.success_rate = success_rate(count_misclassified(preds, batch.labels), r.n);
        r.seed = std::stoull(e.at("seed"));
        table.rows.push_back(r);
        log << source << " -> " << target << (r.white_box() ? " (white-box)" : "") << " svd=" << variant << ": "
            << format_double(r.success_rate) << "\n";
      }
    }
  io::write_text_atomic(p.out / "results.csv", table.to_csv());
  io::write_text_atomic(p.out / "results.json", table.to_json());
  return table;
}

SweepTable cmd_sweep(const RunConfig& cfg, const std::string& axis, std::ostream& log) {
  if (axis != "beta" && axis != "topk" && axis != "layer")
    throw std::invalid_argument("sweep axis must be beta, topk or layer, got '" + axis + "'");
  const Paths p(cfg);
  const int threads = threads_of(cfg);
  const auto grid = cfg.list("sweep_" + axis);
  if (grid.empty()) throw std::invalid_argument("sweep_" + axis + " grid is empty");
  const auto sources = models_of(cfg, "sources"), targets = models_of(cfg, "targets");
  ModelCache models(p);

  // every grid point must be valid for every source before any attack runs
  std::vector<attack::AttackConfig> configs;
  for (const auto& g : grid) {
    RunConfig c = cfg;
    c.set(axis == "beta" ? "svd_beta" : axis == "topk" ? "svd_k" : "svd_layer", g);
    auto ac = attack_config(c, true);
    for (const auto& s : sources) {
      const auto& m = models.get(s);
      const auto& layer = m.layer(ac.hook->layer);
      if (layer.kind != nn::LayerKind::conv_block)
        throw std::invalid_argument("sweep_" + axis + ": " + ac.hook->layer + " of " + s + " is not a convolutional block");
      const auto rank = std::min(layer.out_shape[0], layer.out_shape[1] * layer.out_shape[2]);
      if (ac.hook->k > rank)
        throw std::invalid_argument("sweep_" + axis + ": k=" + g + " exceeds rank " + std::to_string(rank) + " of " +
                                    ac.hook->layer + " in " + s);
    }
    configs.push_back(ac);
  }

  const auto set = attack_set(cfg);
  SweepTable table;
  auto run = [&](const std::string& value, const attack::AttackConfig& ac) {
    for (const auto& s : sources) {
      const auto batch = attack::run_attack(models.get(s), set.images, set.labels, ac, {threads, false, 0});
      for (const auto& t : targets) {
        const auto preds = nn::predict(models.get(t), batch.adv, threads);
        table.rows.push_back(
            {axis, value, s, t, success_rate(count_misclassified(preds, batch.labels), batch.size()), batch.size()});
      }
    }
    log << axis << "=" << value << " done\n";
  };
  run("baseline", attack_config(cfg, false));
  for (std::size_t i = 0; i < grid.size(); ++i) run(grid[i], configs[i]);

  const bool blackbox = std::any_of(sources.begin(), sources.end(), [&](const std::string& s) {
    return std::any_of(targets.begin(), targets.end(), [&](const std::string& t) { return s != t; });
  });
  const auto means = table.means(blackbox);
  PlotSeries curve, base{{}, true};
  for (const auto& [value, m] : means) {
    if (value == "baseline") continue;
    curve.y.push_back(m);
    base.y.push_back(means.front().second);
    log << "  " << axis << "=" << value << " mean " << (blackbox ? "black-box" : "") << " success " << format_double(m)
        << "\n";
  }
  io::write_text_atomic(p.out / ("sweep-" + axis + ".csv"), table.to_csv());
  io::write_text_atomic(p.out / ("sweep-" + axis + ".pgm"), encode_pgm(line_plot({curve, base})));
  return table;
}

CkaOutcome cmd_cka(const RunConfig& cfg, std::ostream& log) {
  const Paths p(cfg);
  const auto layers = cfg.list("cka_layers");
  if (layers.empty()) throw std::invalid_argument("cka_layers is empty");
  const bool center = cfg.flag("cka_center");
  const auto set = attack_set(cfg);
  std::vector<std::uint32_t> ids(set.labels.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>(i);
  ModelCache models(p);

  const auto sources = models_of(cfg, "sources");
  std::map<std::string, std::map<std::string, attack::AdversarialBatch>> batches;
  for (const auto& s : sources)
    for (const auto& v : svd_variants(cfg)) batches[s][v] = attack::load_batch(p.batch(s, v));

  CkaOutcome out;
  for (const auto& s : sources) {
    const auto& m = models.get(s);
    std::vector<analysis::ActivationSet> acts;
    for (const auto& l : layers) acts.push_back(analysis::collect(m, set.images, l, ids));
    analysis::save_activations(p.out / "cka" / (s + ".activations.svda"), acts);
    for (const auto& [v, b] : batches[s]) {
      const auto rep = analysis::cka_layerwise(m, set.images, b.adv, ids, b.sample_ids, layers,
                                               "clean_vs_" + variant_tag(v), center);
      out.layerwise.rows.insert(out.layerwise.rows.end(), rep.rows.begin(), rep.rows.end());
    }
  }
  for (const auto& s : sources)
    for (const auto& t : models_of(cfg, "targets")) {
      if (s == t) continue;
      std::vector<analysis::VariantBatch> vb{{"clean", &set.images}};
      for (const auto& [v, b] : batches[s]) vb.push_back({variant_tag(v), &b.adv});
      const auto rep = analysis::cka_crossmodel(models.get(s), models.get(t), vb, {"pool", "fc"}, center);
      out.crossmodel.rows.insert(out.crossmodel.rows.end(), rep.rows.begin(), rep.rows.end());
    }
  for (const auto& r : out.layerwise.rows)
    log << r.models << " " << r.layer << " " << r.variant << ": " << format_double(r.cka) << "\n";
  for (const auto& r : out.crossmodel.rows)
    log << r.models << " " << r.layer << " " << r.variant << ": " << format_double(r.cka) << "\n";
  io::write_text_atomic(p.out / "cka" / "layerwise.csv", out.layerwise.to_csv());
  io::write_text_atomic(p.out / "cka" / "crossmodel.csv", out.crossmodel.to_csv());
  return out;
}

std::vector<fs::path> cmd_cam(const RunConfig& cfg, std::ostream& log) {
  const Paths p(cfg);
  const auto variant = cfg.str("cam_variant");
  if (variant != "off" && variant != "on") throw std::invalid_argument("cam_variant: expected off or on");
  const auto layer = cfg.str("cam_layer");
  const auto count = cfg.integer("cam_images");
  if (count < 1) throw std::invalid_argument("cam_images must be positive");
  ModelCache models(p);

  std::vector<fs::path> written;
  for (const auto& s : models_of(cfg, "sources")) {
    const auto batch = attack::load_batch(p.batch(s, variant));
    const auto n = std::min(batch.size(), static_cast<std::size_t>(count));
    const auto clean = slice_batch(batch.clean, 0, n), adv = slice_batch(batch.adv, 0, n);
    for (const auto& t : models_of(cfg, "targets")) {
      const auto& m = models.get(t);
      check_compatible(m, clean);
      const auto fc = nn::forward_to_layer(m, clean, layer), fa = nn::forward_to_layer(m, adv, layer);
      if (fc.rank() != 4) throw std::invalid_argument("cam_layer " + layer + " of " + t + " is not spatial");
      for (std::size_t i = 0; i < n; ++i) {
        const auto mc = spectral::eigencam_map(slice_batch(fc, i, 1)),
                   ma = spectral::eigencam_map(slice_batch(fa, i, 1));
        double diff = 0;
        for (std::size_t j = 0; j < mc.size(); ++j) diff += std::abs(mc.data[j] - ma.data[j]);
        const auto stem = p.out / "cam" / (s + "." + variant) / (std::to_string(batch.sample_ids[i]) + "." + t);
        for (const auto& [tag, map] : {std::pair{"clean", &mc}, std::pair{"adv", &ma}}) {
          fs::path path = stem;
          path += std::string(".") + tag + ".pgm";
          io::write_text_atomic(path, encode_pgm(map_to_image(*map, m.in_h, m.in_w)));
          written.push_back(path);
        }
        log << s << " image " << batch.sample_ids[i] << " on " << t << ": mean |clean-adv| "
            << format_double(diff / static_cast<double>(mc.size())) << "\n";
      }
    }
  }
  return written;
}

}  // namespace svda::harness
