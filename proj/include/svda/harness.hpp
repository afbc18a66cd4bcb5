#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "svda/analysis.hpp"
#include "svda/attack.hpp"
#include "svda/config.hpp"
#include "svda/dataset.hpp"
#include "svda/results.hpp"
#include "svda/train.hpp"

namespace svda::harness {

namespace fs = std::filesystem;

/// Where each command reads and writes, all under the output directory
/// unless the dataset keys point elsewhere.
struct Paths {
  fs::path out, train_images, train_labels, test_images, test_labels;

  explicit Paths(const RunConfig& cfg);
  fs::path checkpoint(const std::string& arch) const { return out / "models" / (arch + ".svda"); }
  fs::path metrics() const { return out / "models" / "metrics.csv"; }
  fs::path batch(const std::string& source, const std::string& variant) const {
    return out / "attacks" / (source + "." + variant + ".svda");
  }
  fs::path attack_log(const std::string& source, const std::string& variant) const {
    return out / "attacks" / (source + "." + variant + ".log.csv");
  }
  fs::path eval_log(const std::string& source, const std::string& variant, const std::string& target) const {
    return out / "eval" / (source + "." + variant + "." + target + ".csv");
  }
};

/// Attack settings from the config; `svd` selects the hooked variant.
attack::AttackConfig attack_config(const RunConfig& cfg, bool svd);
/// "off" / "on" entries of svd_variants, validated.
std::vector<std::string> svd_variants(const RunConfig& cfg);

/// The attacked slice of the test set: its first n_images images.
struct AttackSet {
  Tensor<float> images;
  std::vector<int> labels;
};
AttackSet attack_set(const RunConfig& cfg);

/// Images whose prediction differs from the label.
std::size_t count_misclassified(const std::vector<int>& preds, const std::vector<int>& labels);

/// The batch's `meta.config` text as key → value.
std::map<std::string, std::string> parse_echo(const std::string& echo);

void cmd_gen_data(const RunConfig& cfg, std::ostream& log);
std::vector<nn::TrainResult> cmd_train(const RunConfig& cfg, std::ostream& log);

struct AttackOutcome {
  std::string source, variant;
  std::size_t n = 0;
  std::size_t white_box_successes = 0;
  double seconds = 0.0;  ///< wall time of run_attack, never written to disk
};
std::vector<AttackOutcome> cmd_attack(const RunConfig& cfg, std::ostream& log);

ResultsTable cmd_eval(const RunConfig& cfg, std::ostream& log);

SweepTable cmd_sweep(const RunConfig& cfg, const std::string& axis, std::ostream& log);

struct CkaOutcome {
  analysis::CKAReport layerwise, crossmodel;
};
CkaOutcome cmd_cka(const RunConfig& cfg, std::ostream& log);

std::vector<fs::path> cmd_cam(const RunConfig& cfg, std::ostream& log);

}  // namespace svda::harness
