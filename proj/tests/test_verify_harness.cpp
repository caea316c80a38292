#include <gtest/gtest.h>

#include "ntklab/error.hpp"
#include "ntklab/verify_harness.hpp"

using namespace ntklab;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind{0};
}

const CheckResult& find_check(const SuiteReport& r, const std::string& name) {
  for (const auto& c : r.checks)
    if (c.name == name) return c;
  throw std::runtime_error("no check " + name);
}

}  // namespace

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_EQ(median({4.0, 1.0, 3.0, 2.0}), 2.5);
  EXPECT_THROW(median({}), Error);
}

TEST(Suites, NamesAndDefaults) {
  const auto& names = suite_names();
  EXPECT_EQ(names.size(), 6u);
  for (const auto& n : names) {
    const Json c = default_suite_config(n);
    EXPECT_TRUE(c.contains("seeds")) << n;
  }
  EXPECT_EQ(default_suite_config("events")["seeds"], 100);
  EXPECT_EQ(default_suite_config("kernel")["widths"].size(), 4u);
}

TEST(Suites, RejectsUnknownSuiteAndKeys) {
  EXPECT_EQ(kind_of([] { run_suite("nope", Json(), 1, 0, 1); }), ErrorKind::kInvalidArgument);
  EXPECT_EQ(kind_of([] { run_suite("events", Json{{"bogus", 1}}, 1, 0, 1); }), ErrorKind::kFormat);
  EXPECT_EQ(kind_of([] { run_suite("events", Json{{"n", 4096}}, 1, 0, 1); }), ErrorKind::kScale);
  EXPECT_EQ(kind_of([] { run_suite("events", Json{{"m", 1023}}, 1, 0, 1); }),
            ErrorKind::kInvalidWidth);
}

TEST(Events, SmallRunIsJobIndependent) {
  const Json ov{{"d", 16}, {"n", 64}, {"m", 1024}};
  const SuiteReport a = run_suite("events", ov, 6, 100, 1);
  const SuiteReport b = run_suite("events", ov, 6, 100, 4);
  EXPECT_EQ(suite_report_json(a), suite_report_json(b));
  ASSERT_EQ(a.per_seed.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a.per_seed[i].seed, 100 + i);
  EXPECT_EQ(find_check(a, "data_norm").value, 1.0);
  for (const auto& s : a.per_seed) {
    EXPECT_LE(s.values["lambda_min"].get<double>(), s.values["gram_trace_over_n"].get<double>());
  }
}

TEST(Kernel, ReportsPerWidthEstimates) {
  const SuiteReport r =
      run_suite("kernel", Json{{"d", 8}, {"probes", 256}, {"widths", {64, 4096}}}, 3, 0, 2);
  EXPECT_EQ(r.summary["median_estimates"].size(), 2u);
  EXPECT_TRUE(find_check(r, "median_decreasing_in_m").pass);
}

TEST(Overfit, TinyRunDrivesRiskDown) {
  const SuiteReport r = run_suite(
      "overfit", Json{{"d", 5}, {"n", 20}, {"m", 512}, {"epsilon", 0.3}, {"noise", 0.05}}, 2, 0, 2);
  for (const auto& s : r.per_seed) {
    EXPECT_LT(s.values["final_risk"].get<double>(), s.values["initial_risk"].get<double>());
    EXPECT_TRUE(s.values["checkpoints_nonincreasing"].get<bool>());
  }
  EXPECT_TRUE(find_check(r, "movement").informational);
}

TEST(Estimation, GapStartsAtZero) {
  const SuiteReport r =
      run_suite("estimation",
                Json{{"d", 5}, {"m", 256}, {"epsilon", 0.5}, {"ladder", {10, 40}},
                     {"pop_batch", 512}, {"mc_risk", 2000}},
                2, 0, 2);
  EXPECT_TRUE(find_check(r, "gap_zero_at_start").pass);
  EXPECT_TRUE(find_check(r, "median_gap_decreasing").surrogate);
  EXPECT_TRUE(r.surrogate_flags["median_gap_decreasing"].get<bool>());
}

TEST(Benign, MarkedSurrogate) {
  const SuiteReport r = run_suite(
      "benign",
      Json{{"d", 5}, {"n", 40}, {"m", 512}, {"epsilon", 0.5}, {"mc_risk", 4000},
           {"large_noise_trace", false}},
      1, 0, 1);
  EXPECT_TRUE(find_check(r, "conjunction").surrogate);
  const Json j = Json::parse(suite_report_json(r));
  EXPECT_EQ(j["suite"], "benign");
  EXPECT_TRUE(j["surrogate_flags"]["conjunction"].get<bool>());
}

TEST(Approx, TinyRunProducesEnvelope) {
  const SuiteReport r = run_suite(
      "approx",
      Json{{"d", 5}, {"m", 256}, {"epsilon", 0.5}, {"pop_batch", 512}, {"mc_risk", 2000},
           {"proxy_samples", 2000}},
      1, 0, 1);
  const auto& s = r.per_seed.front();
  EXPECT_EQ(s.values["zeta_norm"].size(), s.values["times"].size());
  EXPECT_GT(s.values["tail_proxy"].get<double>(), -1e-300);
}
