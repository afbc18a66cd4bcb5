// svda: command-line driver for the SVD feature-decomposition attack workbench.
//
//   svda gen-data --out run
//   svda train --out run
//   svda attack --out run --threads 4
//   svda eval --out run
//   svda sweep --axis beta --out run
//   svda cka --out run
//   svda cam --out run
//
// Settings come from defaults, then --config FILE, then --set key=value and
// the global flags. `svda keys` lists every key.

#include <CLI11.hpp>
#include <chrono>
#include <iostream>

#include "svda/harness.hpp"

using namespace svda::harness;

int main(int argc, char** argv) {
  CLI::App app{"SVD feature-decomposition adversarial attack workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "key = value settings file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "seed for data, training and attacks");
  app.add_option("--out", out, "output directory");
  app.add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("-s,--set", sets, "override one setting, key=value");

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic-shapes train and test sets");
  auto* train = app.add_subcommand("train", "train each architecture in 'archs'");
  auto* attack = app.add_subcommand("attack", "craft adversarial batches on each source model");
  auto* eval = app.add_subcommand("eval", "evaluate every batch on every target model");
  auto* sweep = app.add_subcommand("sweep", "attack and evaluate over a grid of one hook parameter");
  std::string axis;
  sweep->add_option("--axis", axis, "beta | topk | layer")->required()->check(CLI::IsMember({"beta", "topk", "layer"}));
  auto* cka = app.add_subcommand("cka", "layerwise and cross-model linear CKA reports");
  auto* cam = app.add_subcommand("cam", "Eigen-CAM saliency images for clean and adversarial inputs");
  auto* keys = app.add_subcommand("keys", "list configuration keys and defaults");

  CLI11_PARSE(app, argc, argv);

  if (keys->parsed()) {
    for (const auto& k : config_keys())
      std::cout << k.key << " = " << k.default_value << "    # " << k.help << "\n";
    return 0;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    for (const auto& s : sets) cfg.set_assignment(s);
    if (!out.empty()) cfg.set("out", out);
    if (seed) cfg.set("seed", std::to_string(*seed));
    if (threads) cfg.set("threads", std::to_string(*threads));

    const auto t0 = std::chrono::steady_clock::now();
    if (gen->parsed()) cmd_gen_data(cfg, std::cout);
    if (train->parsed()) cmd_train(cfg, std::cout);
    if (attack->parsed()) cmd_attack(cfg, std::cout);
    if (eval->parsed()) cmd_eval(cfg, std::cout);
    if (sweep->parsed()) cmd_sweep(cfg, axis, std::cout);
    if (cka->parsed()) cmd_cka(cfg, std::cout);
    if (cam->parsed()) std::cout << cmd_cam(cfg, std::cout).size() << " images written\n";
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    std::cerr << "done in " << dt.count() << " s\n";
  } catch (const std::exception& e) {
    std::cerr << "svda: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
