#include <gtest/gtest.h>

#include <cmath>

#include "cttest/harness.hpp"

namespace cttest {
namespace {

StudyConfig quick(int reps) {
  StudyConfig c;
  c.scenario = "sim0";
  c.delta = 0.3;
  c.eps = 0.1;
  c.subjects = 6;
  c.reps = reps;
  c.master_seed = 2024;
  return c;
}

TEST(Study, SingleReplicationHasZeroSe) {
  const auto t = run_power_study(quick(1), 1);
  for (const auto& m : t.methods) {
    EXPECT_TRUE(m.p_hat == 0.0 || m.p_hat == 1.0);
    EXPECT_EQ(m.se, 0.0);
  }
  EXPECT_EQ(t.log.size(), 4u);
}

TEST(Study, SeFormulaExact) {
  const auto t = run_power_study(quick(12), 2);
  for (const auto& m : t.methods) {
    EXPECT_EQ(m.p_hat, double(m.rejections) / 12);
    EXPECT_EQ(m.se, std::sqrt(m.p_hat * (1.0 - m.p_hat) / 12));
    EXPECT_GE(m.p_hat, 0.0);
    EXPECT_LE(m.p_hat, 1.0);
  }
}

TEST(Study, IdenticalAcrossWorkerCounts) {
  const auto a = run_power_study(quick(10), 1);
  const auto b = run_power_study(quick(10), 3);
  const auto c = run_power_study(quick(10), 8);
  ASSERT_EQ(a.log.size(), b.log.size());
  for (std::size_t k = 0; k < a.log.size(); ++k) {
    for (const auto* other : {&b, &c}) {
      EXPECT_EQ(a.log[k].seed, other->log[k].seed);
      EXPECT_EQ(a.log[k].method, other->log[k].method);
      EXPECT_EQ(a.log[k].estimate, other->log[k].estimate);
      EXPECT_EQ(a.log[k].p_value, other->log[k].p_value);
      EXPECT_EQ(a.log[k].failed, other->log[k].failed);
    }
  }
  for (std::size_t m = 0; m < a.methods.size(); ++m) EXPECT_EQ(a.methods[m].rejections, c.methods[m].rejections);
}

TEST(Study, FailuresCountedAsNonRejections) {
  StudyConfig c = quick(3);
  c.schedule = Schedule::treatment1();
  c.methods = {"dtvalue"};
  const auto t = run_power_study(c, 1);
  EXPECT_EQ(t.at("dtvalue").failures, 3);
  EXPECT_EQ(t.at("dtvalue").rejections, 0);
  EXPECT_EQ(t.at("dtvalue").p_hat, 0.0);
  for (const auto& r : t.log) {
    EXPECT_TRUE(r.failed);
    EXPECT_FALSE(r.reject);
    EXPECT_NE(r.diagnostic.find("SingleActionSystem"), std::string::npos);
  }
}

TEST(Study, ValidatesConfig) {
  StudyConfig c = quick(0);
  EXPECT_THROW(run_power_study(c), Error);
  c = quick(2);
  c.alpha = 1.0;
  EXPECT_THROW(run_power_study(c), Error);
  c = quick(2);
  c.methods = {"save"};
  EXPECT_THROW(run_power_study(c), Error);
  c = quick(2);
  c.subjects = 0;
  EXPECT_THROW(run_power_study(c), Error);
}

TEST(Sweep, EmptyGridEmptyOutput) { EXPECT_TRUE(sweep(quick(2), SweepGrid{}).empty()); }

TEST(Sweep, OneTablePerPointWithOffsetSeeds) {
  SweepGrid g;
  g.deltas = {0.0, 0.3};
  g.sample_sizes = {{25, 12}};
  const auto configs = sweep_configs(quick(2), g);
  ASSERT_EQ(configs.size(), 3u);
  EXPECT_EQ(configs[1].delta, 0.3);
  EXPECT_EQ(configs[2].plan.state_count, 25);
  EXPECT_EQ(configs[2].master_seed, 2026u);
  StudyConfig c = quick(2);
  c.methods = {"proposed", "t"};
  const auto tables = sweep(c, g, 2);
  ASSERT_EQ(tables.size(), 3u);
  EXPECT_NE(tables[0].label, tables[1].label);
  EXPECT_NE(tables[2].label.find("ns=25 ny=12"), std::string::npos);
}

TEST(Presets, ShapeOfEachTable) {
  EXPECT_EQ(preset_configs(paper_preset("1", 7)).size(), 8u);
  const auto t2 = preset_configs(paper_preset("2", 7));
  ASSERT_EQ(t2.size(), 3u);
  EXPECT_EQ(t2[2].scenario, "sim3");
  const auto s2 = preset_configs(paper_preset("sim2", 7));
  ASSERT_EQ(s2.size(), 3u);
  EXPECT_EQ(s2[0].plan.outcome_count, 12);
  const auto s3 = preset_configs(paper_preset("sim3", 7));
  ASSERT_EQ(s3.size(), 4u);
  EXPECT_EQ(s3[0].delta, 0.0);
  EXPECT_THROW(paper_preset("4", 7), Error);
}

}  // namespace
}  // namespace cttest
