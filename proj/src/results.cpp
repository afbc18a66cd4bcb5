#include "svda/results.hpp"

#include <charconv>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

namespace svda::harness {

std::string format_double(double v) {
  char buf[40];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf, p);
}

double success_rate(std::size_t successes, std::size_t n) {
  if (n == 0) throw std::invalid_argument("success_rate: no images");
  if (successes > n) throw std::invalid_argument("success_rate: more successes than images");
  return static_cast<double>(successes) / static_cast<double>(n);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell += c;
    }
  }
  out.push_back(cell);
  return out;
}

namespace {

template <class T>
T parse_num(const std::string& s, const std::string& what) {
  T v{};
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    throw std::invalid_argument("csv: bad " + what + " '" + s + "'");
  return v;
}

std::vector<std::vector<std::string>> read_rows(const std::string& text, const char* header, std::size_t cols) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw std::invalid_argument("csv: expected header '" + std::string(header) + "'");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != cols) throw std::invalid_argument("csv: row has " + std::to_string(f.size()) + " fields: " + line);
    rows.push_back(std::move(f));
  }
  return rows;
}

}  // namespace

std::string ResultsTable::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows) {
    out += r.source + "," + r.target + "," + r.attack + "," + (r.svd ? "1" : "0") + ",";
    if (r.svd)
      out += (r.k == 0 ? std::string("full") : std::to_string(r.k)) + "," + format_double(r.beta) + "," + r.layer;
    else
      out += "-,-,-";
    out += "," + format_double(r.success_rate) + "," + std::to_string(r.n) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

ResultsTable ResultsTable::from_csv(const std::string& text) {
  ResultsTable t;
  for (const auto& f : read_rows(text, kHeader, 10)) {
    ResultRow r;
    r.source = f[0];
    r.target = f[1];
    r.attack = f[2];
    if (f[3] != "0" && f[3] != "1") throw std::invalid_argument("csv: bad svd flag '" + f[3] + "'");
    r.svd = f[3] == "1";
    if (r.svd) {
      r.k = f[4] == "full" ? 0 : parse_num<std::size_t>(f[4], "k");
      r.beta = parse_num<double>(f[5], "beta");
      r.layer = f[6];
    }
    r.success_rate = parse_num<double>(f[7], "success_rate");
    r.n = parse_num<std::size_t>(f[8], "n");
    r.seed = parse_num<std::uint64_t>(f[9], "seed");
    t.rows.push_back(std::move(r));
  }
  return t;
}

std::string ResultsTable::to_json() const {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["source"] = r.source;
    j["target"] = r.target;
    j["attack"] = r.attack;
    j["svd"] = r.svd;
    if (r.svd) {
      j["k"] = r.k == 0 ? nlohmann::ordered_json("full") : nlohmann::ordered_json(r.k);
      j["beta"] = r.beta;
      j["layer"] = r.layer;
    }
    j["success_rate"] = r.success_rate;
    j["n"] = r.n;
    j["seed"] = r.seed;
    j["white_box"] = r.white_box();
    arr.push_back(std::move(j));
  }
  return nlohmann::ordered_json{{"results", arr}}.dump(2) + "\n";
}

std::string SweepTable::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const auto& r : rows)
    out += r.axis + "," + r.value + "," + r.source + "," + r.target + "," + format_double(r.success_rate) + "," +
           std::to_string(r.n) + "\n";
  return out;
}

SweepTable SweepTable::from_csv(const std::string& text) {
  SweepTable t;
  for (const auto& f : read_rows(text, kHeader, 6))
    t.rows.push_back({f[0], f[1], f[2], f[3], parse_num<double>(f[4], "success_rate"), parse_num<std::size_t>(f[5], "n")});
  return t;
}

std::vector<std::pair<std::string, double>> SweepTable::means(bool blackbox_only) const {
  std::vector<std::pair<std::string, double>> out;
  std::vector<int> counts;
  for (const auto& r : rows) {
    if (blackbox_only && r.source == r.target) continue;
    std::size_t i = 0;
    while (i < out.size() && out[i].first != r.value) ++i;
    if (i == out.size()) {
      out.emplace_back(r.value, 0.0);
      counts.push_back(0);
    }
    out[i].second += r.success_rate;
    ++counts[i];
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i].second /= counts[i];
  return out;
}

}  // namespace svda::harness
