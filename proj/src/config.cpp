#include "svda/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace svda::harness {

const std::vector<KeySpec>& config_keys() {
  static const std::vector<KeySpec> keys = {
      {"out", "run", "output directory"},
      {"seed", "0", "seed for data, training and attacks"},
      {"threads", "1", "worker threads"},
      // data
      {"train_images", "", "train images file (default <out>/data/train-images.svdd)"},
      {"train_labels", "", "train labels file (default <out>/data/train-labels.svdl)"},
      {"test_images", "", "test images file (default <out>/data/test-images.svdd)"},
      {"test_labels", "", "test labels file (default <out>/data/test-labels.svdl)"},
      {"n_train", "3000", "gen-data: training images"},
      {"n_test", "1000", "gen-data: test images"},
      // training
      {"archs", "convnet_a,convnet_b,convnet_c", "architectures to train"},
      {"epochs", "5", "training epochs"},
      {"lr", "0.01", "learning rate"},
      {"momentum", "0.9", "SGD momentum"},
      {"batch_size", "16", "minibatch size"},
      // attack
      {"sources", "convnet_a,convnet_b,convnet_c", "models adversarial examples are crafted on"},
      {"targets", "convnet_a,convnet_b,convnet_c", "models adversarial examples are evaluated on"},
      {"n_images", "500", "test images attacked, taken from the start of the test set"},
      {"method", "mifgsm", "ifgsm | mifgsm | nifgsm"},
      {"epsilon", "16", "L-inf budget in pixel units"},
      {"steps", "10", "iterations T"},
      {"alpha", "", "step size (default epsilon/steps)"},
      {"mu", "1.0", "momentum decay"},
      {"di", "false", "input diversity"},
      {"di_p", "0.5", "DI probability"},
      {"di_min_scale", "0.9", "DI smallest resize as a fraction of the side"},
      {"ti_len", "0", "TI kernel length, 0 = off"},
      {"si_m", "0", "SI copies, 0 = off"},
      {"vt", "false", "variance tuning"},
      {"vt_beta", "1.5", "VT neighbourhood factor"},
      {"vt_n", "20", "VT samples"},
      {"svd_variants", "off,on", "attack variants to run: off, on"},
      {"svd_layer", "block3", "layer whose feature is decomposed"},
      {"svd_k", "1", "singular components kept, or full"},
      {"svd_beta", "0.5", "fusion weight of the untouched logits"},
      {"svd_grad", "full", "full | detached"},
      // sweeps
      {"sweep_beta", "0,0.25,0.5,0.75,1", "beta grid"},
      {"sweep_topk", "1,2,3,5,8,full", "k grid"},
      {"sweep_layer", "block1,block2,block3,block4", "layer grid"},
      // analysis
      {"cka_layers", "block1,block2,block3,block4,pool,fc", "layers in the layerwise CKA report"},
      {"cka_center", "false", "subtract column means before CKA"},
      {"cam_layer", "block4", "layer used for saliency maps"},
      {"cam_images", "4", "images per model for saliency maps"},
      {"cam_variant", "on", "which attack batch the saliency maps use: off | on"},
  };
  return keys;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool known(const std::string& key) {
  for (const auto& k : config_keys())
    if (key == k.key) return true;
  return false;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.key] = k.default_value;
}

RunConfig RunConfig::parse(std::string_view text, std::string_view origin) {
  RunConfig cfg;
  std::istringstream in{std::string(text)};
  std::string line;
  for (int lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const auto where = std::string(origin) + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw std::invalid_argument(where + ": expected key = value");
    const auto key = trim(std::string_view(body).substr(0, eq));
    if (!known(key)) throw std::invalid_argument(where + ": unknown key '" + key + "'");
    cfg.values_[key] = trim(std::string_view(body).substr(eq + 1));
  }
  return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error(path + ": cannot open config");
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str(), path);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!known(key)) throw std::invalid_argument("unknown config key '" + key + "'");
  values_[key] = value;
}

void RunConfig::set_assignment(std::string_view kv) {
  const auto eq = kv.find('=');
  if (eq == std::string_view::npos) throw std::invalid_argument("expected key=value, got '" + std::string(kv) + "'");
  set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

const std::string& RunConfig::str(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key '" + key + "'");
  return it->second;
}

std::vector<std::string> RunConfig::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(str(key));
  for (std::string item; std::getline(ss, item, ',');)
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

namespace {

template <class T>
T number(const std::string& key, const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty())
    throw std::invalid_argument("config key '" + key + "': '" + s + "' is not a valid number");
  return v;
}

}  // namespace

std::vector<double> RunConfig::doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : list(key)) out.push_back(number<double>(key, s));
  return out;
}

double RunConfig::real(const std::string& key) const { return number<double>(key, str(key)); }
std::int64_t RunConfig::integer(const std::string& key) const { return number<std::int64_t>(key, str(key)); }
std::uint64_t RunConfig::u64(const std::string& key) const { return number<std::uint64_t>(key, str(key)); }

bool RunConfig::flag(const std::string& key) const {
  const auto& s = str(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::invalid_argument("config key '" + key + "': '" + s + "' is not a boolean");
}

std::string RunConfig::dump() const {
  std::string out;
  for (const auto& k : config_keys()) out += std::string(k.key) + " = " + values_.at(k.key) + "\n";
  return out;
}

}  // namespace svda::harness
