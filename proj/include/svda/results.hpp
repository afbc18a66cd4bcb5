#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace svda::harness {

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

struct ResultRow {
  std::string source, target, attack;
  bool svd = false;
  std::size_t k = 0;  ///< 0 = full rank; 0 without SVD
  double beta = 1.0;  ///< 1 without SVD
  std::string layer;  ///< empty without SVD
  double success_rate = 0.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;

  bool white_box() const { return source == target; }
  bool operator==(const ResultRow&) const = default;
};

/// successes / n, the only way rows get their rate.
double success_rate(std::size_t successes, std::size_t n);

struct ResultsTable {
  std::vector<ResultRow> rows;

  static constexpr const char* kHeader = "source,target,attack,svd,k,beta,layer,success_rate,n,seed";
  std::string to_csv() const;
  static ResultsTable from_csv(const std::string& text);
  std::string to_json() const;
};

struct SweepRow {
  std::string axis;   ///< beta, topk or layer
  std::string value;  ///< grid value as given, or "baseline" for the no-SVD run
  std::string source, target;
  double success_rate = 0.0;
  std::size_t n = 0;

  bool operator==(const SweepRow&) const = default;
};

struct SweepTable {
  std::vector<SweepRow> rows;

  static constexpr const char* kHeader = "axis,value,source,target,success_rate,n";
  std::string to_csv() const;
  static SweepTable from_csv(const std::string& text);
  /// Mean rate per grid value in first-seen order, over black-box cells
  /// only or over all cells.
  std::vector<std::pair<std::string, double>> means(bool blackbox_only = true) const;
};

std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace svda::harness
