#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace chc {

// Flat key=value configuration. Unknown keys are rejected; every run embeds
// the resolved configuration verbatim in its output directory.
class RunConfig {
 public:
  static RunConfig parse(const std::string& text);
  static RunConfig from_file(const std::string& path);

  void apply_override(const std::string& key_eq_value);
  void validate_keys() const;  // throws on unknown keys

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string str(const std::string& key, const std::string& dflt) const;
  double num(const std::string& key, double dflt) const;
  long long integer(const std::string& key, long long dflt) const;
  bool flag(const std::string& key, bool dflt) const;

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  std::string resolved_text() const;  // canonical serialized form

 private:
  std::map<std::string, std::string> kv_;
};

struct RunOptions {
  std::string out_dir = "runs/last";
  std::uint64_t seed = 1;
  int threads = 1;
};

// exit codes: 0 success, 2 validation failure, 3 numerical failure
// (NaN/divergence), 4 non-convergence
int run_subcommand(const std::string& cmd, RunConfig cfg, const RunOptions& opt,
                   std::ostream& err);

const std::vector<std::string>& known_subcommands();

}  // namespace chc
