#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace ntklab {

using Json = nlohmann::ordered_json;

struct SeedResult {
  std::uint64_t seed = 0;
  bool pass = false;
  Json values = Json::object();
};

// One asserted (or informational) statement about the seed population.
struct CheckResult {
  std::string name;
  std::string bound;
  double value = 0.0;      // frequency, or the statistic compared
  double threshold = 0.0;
  bool pass = false;
  bool surrogate = false;      // stands in for a claim that needs much larger n, m
  bool informational = false;  // reported only, not part of the verdict
};

struct SuiteReport {
  std::string suite;
  Json config = Json::object();
  Json thresholds = Json::object();
  std::vector<SeedResult> per_seed;
  std::vector<CheckResult> checks;
  double frequency = 0.0;  // fraction of seeds passing every per-seed check
  bool verdict = false;    // every non-informational check passes
  Json surrogate_flags = Json::object();
  Json summary = Json::object();  // suite-level statistics (medians etc.)
};

const std::vector<std::string>& suite_names();

// Default configuration of a suite, as JSON.
Json default_suite_config(const std::string& suite);

// Runs a suite. overrides may set any key of the default config (unknown
// keys are rejected); seeds < 0 keeps the configured count. Seeds are
// base_seed, base_seed + 1, ... and run on up to jobs threads; the report
// does not depend on jobs or on scheduling.
SuiteReport run_suite(const std::string& suite, const Json& overrides,
                      int seeds, std::uint64_t base_seed, int jobs);

std::string suite_report_json(const SuiteReport& report);

// Median of a copy of values (mean of the middle pair for even sizes).
double median(std::vector<double> values);

}  // namespace ntklab
