#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace svda::harness {

struct KeySpec {
  const char* key;
  const char* default_value;
  const char* help;
};

/// Every key RunConfig accepts, with its default.
const std::vector<KeySpec>& config_keys();

/// Flat `key = value` settings. Unknown keys are rejected on every path in.
class RunConfig {
 public:
  RunConfig();

  /// Lines of `key = value`; `#` starts a comment. Later lines win.
  static RunConfig parse(std::string_view text, std::string_view origin = "<config>");
  static RunConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  /// "key=value" form, as given to --set.
  void set_assignment(std::string_view kv);

  const std::string& str(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<double> doubles(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;

  /// Canonical dump, one `key = value` line per key in table order.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace svda::harness
