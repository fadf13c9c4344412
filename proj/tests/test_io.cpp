#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>

#include "cttest/io.hpp"

namespace cttest {
namespace {

ErrorCode code_of(const std::string& text) {
  try {
    parse_dataset_csv_text(text);
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error for:\n" << text;
  return ErrorCode::IoError;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("cttest_io_" + name)).string();
}

TEST(DatasetCsv, FourRowExample) {
  const auto ds = parse_dataset_csv_text(
      "subject,time,channel,value\n"
      "p1,0,a,0\n"
      "p1,0,s1,0.0\n"
      "p1,0.2,y,0.1\n"
      "p1,0.1,s1,0.05\n");
  ASSERT_EQ(ds.trajectories.size(), 1u);
  EXPECT_EQ(ds.d, 1);
  const auto& tr = ds.trajectories[0];
  ASSERT_EQ(tr.state_obs.size(), 2u);
  EXPECT_DOUBLE_EQ(tr.state_obs[1].time, 0.1);
  EXPECT_DOUBLE_EQ(tr.state_obs[1].values[0], 0.05);
  ASSERT_EQ(tr.outcome_obs.size(), 1u);
  ASSERT_EQ(tr.action_obs.size(), 1u);
  EXPECT_EQ(tr.action_obs[0].action, 0);
}

TEST(DatasetCsv, ActionsCompressedAndDimensionsInferred) {
  const auto ds = parse_dataset_csv_text(
      "subject,time,channel,value\n"
      "q,0,a,1\nq,1,a,1\nq,2,a,0\n"
      "q,0,s2,5\nq,0,s1,4\n"
      "p,0,a,0\np,0,s1,1\np,0,s2,2\n");
  ASSERT_EQ(ds.trajectories.size(), 2u);
  EXPECT_EQ(ds.trajectories[0].subject_id, "q");
  EXPECT_EQ(ds.d, 2);
  EXPECT_EQ(ds.trajectories[0].action_obs.size(), 2u);
  EXPECT_DOUBLE_EQ(ds.trajectories[0].state_obs[0].values[1], 5.0);
}

TEST(DatasetCsv, Errors) {
  const std::string h = "subject,time,channel,value\n";
  EXPECT_EQ(code_of(h + "p1,0.3,a,0.5\n"), ErrorCode::NonBinaryAction);
  EXPECT_EQ(code_of(h + "p1,0.3,y,1\np1,0.3,y,2\n"), ErrorCode::DuplicateTimestamp);
  EXPECT_EQ(code_of(h + "p1,0,s1,1\np1,0,s2,1\np1,1,s1,1\n"), ErrorCode::MixedDimensions);
  EXPECT_EQ(code_of(h + "p1,zero,y,1\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of(h + "p1,0,z,1\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of(h + "p1,0,y\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("id,t,c,v\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of(h + "p1,1e400,y,1\n"), ErrorCode::ParseError);
  try {
    parse_dataset_csv_text(h + "p1,0,y,1\np1,x,y,1\n");
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(DatasetCsv, MissingInitialActionSurfacesInValidation) {
  const auto ds = parse_dataset_csv_text("subject,time,channel,value\np1,0.5,a,1\np1,0,s1,0\np1,0.2,y,1\n");
  bool found = false;
  for (const auto& d : validate_dataset(ds)) found = found || d.kind == DiagnosticKind::MissingInitialAction;
  EXPECT_TRUE(found);
}

TEST(DatasetCsv, RoundTripTwelveDigits) {
  const auto ds = simulate_dataset(scenario_sim2(0.3), Schedule::treatment1(), SamplingPlan{}, 3, 8);
  const std::string path = temp_path("roundtrip.csv");
  write_dataset_csv(path, ds);
  const auto back = parse_dataset_csv(path);
  std::remove(path.c_str());
  ASSERT_EQ(back.trajectories.size(), ds.trajectories.size());
  EXPECT_EQ(back.d, ds.d);
  auto close12 = [](double a, double b) { return std::abs(a - b) <= 1e-11 * std::max(1.0, std::abs(a)); };
  for (std::size_t i = 0; i < ds.trajectories.size(); ++i) {
    const auto& a = ds.trajectories[i];
    const auto& b = back.trajectories[i];
    ASSERT_EQ(a.state_obs.size(), b.state_obs.size());
    ASSERT_EQ(a.outcome_obs.size(), b.outcome_obs.size());
    ASSERT_EQ(a.action_obs.size(), b.action_obs.size());
    for (std::size_t k = 0; k < a.state_obs.size(); ++k) {
      EXPECT_TRUE(close12(a.state_obs[k].time, b.state_obs[k].time));
      for (int j = 0; j < ds.d; ++j) EXPECT_TRUE(close12(a.state_obs[k].values[j], b.state_obs[k].values[j]));
    }
    for (std::size_t k = 0; k < a.outcome_obs.size(); ++k) {
      EXPECT_TRUE(close12(a.outcome_obs[k].value, b.outcome_obs[k].value));
    }
    for (std::size_t k = 0; k < a.action_obs.size(); ++k) {
      EXPECT_TRUE(close12(a.action_obs[k].time, b.action_obs[k].time));
      EXPECT_EQ(a.action_obs[k].action, b.action_obs[k].action);
    }
  }
  EXPECT_EQ(dataset_to_csv(back), dataset_to_csv(ds));
}

TEST(Io, UnwritablePath) {
  try {
    write_file("/nonexistent-dir/x/out.json", "{}");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
  EXPECT_THROW(read_file("/nonexistent-dir/in.csv"), Error);
}

TEST(ResultJson, RoundTripAndFields) {
  const auto ds = simulate_dataset(scenario_sim0(0.3, 0.1), Schedule::treatment2(), SamplingPlan{}, 6, 4);
  EstimatorConfig cfg;
  const auto r = run_test(ds, cfg);
  const auto doc = result_document(r, cfg, 0.05);
  EXPECT_EQ(doc.at("version"), std::string(kVersion));
  EXPECT_TRUE(doc.contains("config"));
  EXPECT_EQ(doc.at("reject").get<bool>(), r.p_one_sided < 0.05);
  const std::string path = temp_path("result.json");
  write_result_json(path, r, cfg, 0.05);
  const auto back = read_result_json(path);
  std::remove(path.c_str());
  EXPECT_EQ(back.tau_hat, r.tau_hat);
  EXPECT_EQ(back.sigma_hat, r.sigma_hat);
  EXPECT_EQ(back.z, r.z);
  EXPECT_EQ(back.p_one_sided, r.p_one_sided);
  EXPECT_EQ(back.beta0, r.beta0);
  EXPECT_EQ(back.beta1, r.beta1);
  EXPECT_EQ(back.n_eff, r.n_eff);
  EXPECT_EQ(back.cond_sigma, r.cond_sigma);
  EXPECT_EQ(back.diagnostics, r.diagnostics);
}

TEST(ConfigJson, StudyRoundTrip) {
  StudyConfig c;
  c.scenario = "sim2";
  c.delta = 0.25;
  c.schedule = Schedule::pulses({1.0, 2.5}, 0.3);
  c.plan.state_count = 50;
  c.reps = 17;
  c.methods = {"proposed", "dml"};
  c.master_seed = 123456789012345ULL;
  c.estimator.gamma = 0.8;
  c.estimator.basis_spec.kind = FeatureKind::AdditiveBSpline;
  c.estimator.reference_measure = ReferenceMeasure::point_mass(Vec::Zero(2));
  c.estimator.smoothing_spec.drift_method = DriftMethod::SplineDerivative;
  const json j = to_json(c);
  const StudyConfig back = study_config_from_json(j);
  EXPECT_EQ(to_json(back).dump(), j.dump());
}

TEST(ConfigJson, DefaultsShorthandAndErrors) {
  SweepGrid g;
  const auto c = study_config_from_json(
      json::parse(R"({"scenario":"sim1","schedule":"T1","sweep":{"sample_sizes":[[25,12],[50,25]]}})"), &g);
  EXPECT_EQ(c.schedule.period, 1.0);
  EXPECT_EQ(c.reps, 200);
  EXPECT_EQ(c.subjects, 20);
  ASSERT_EQ(g.sample_sizes.size(), 2u);
  EXPECT_THROW(study_config_from_json(json::parse(R"({"reps":"many"})")), Error);
  EXPECT_THROW(study_config_from_json(json::parse(R"({"replications":5})")), Error);
  EXPECT_THROW(estimator_config_from_json(json::parse(R"({"basis":{"kind":"fourier"}})")), Error);
  EXPECT_THROW(parse_json_text("{not json"), Error);
}

PowerTable table_with(const std::string& label, std::vector<MethodPower> methods) {
  PowerTable t;
  t.label = label;
  t.methods = std::move(methods);
  return t;
}

TEST(PowerCsv, RoundTrip) {
  const std::vector<PowerTable> tables{
      table_with("sim0 square(5,0.5) delta=0.3 eps=0.1",
                 {{"proposed", 200, 197, 0, 0.985, std::sqrt(0.985 * 0.015 / 200)}, {"t", 200, 0, 1, 0.0, 0.0}}),
      table_with("with, comma", {{"dml", 10, 3, 0, 0.3, std::sqrt(0.3 * 0.7 / 10)}})};
  const auto text = power_tables_to_csv(tables);
  const auto back = parse_power_csv_text(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].label, "with, comma");
  for (std::size_t t = 0; t < tables.size(); ++t) {
    ASSERT_EQ(back[t].methods.size(), tables[t].methods.size());
    for (std::size_t m = 0; m < tables[t].methods.size(); ++m) {
      const auto& a = tables[t].methods[m];
      const auto& b = back[t].methods[m];
      EXPECT_EQ(a.method, b.method);
      EXPECT_EQ(a.p_hat, b.p_hat);
      EXPECT_EQ(a.se, b.se);
      EXPECT_EQ(a.failures, b.failures);
      EXPECT_EQ(a.rejections, b.rejections);
      EXPECT_EQ(a.reps, b.reps);
    }
  }
  EXPECT_EQ(power_tables_to_csv(back), text);
}

TEST(PowerCsv, SingleMethodSingleRow) {
  const auto text = power_tables_to_csv({table_with("x", {{"proposed", 5, 1, 0, 0.2, 0.1}})});
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
}

TEST(Manifest, ListsStudiesAndPaths) {
  StudyConfig c;
  const auto m = run_manifest({c}, {}, "t.csv", "t.replications.csv");
  EXPECT_EQ(m.at("studies").size(), 1u);
  EXPECT_EQ(m.at("studies")[0].at("seed").get<std::uint64_t>(), 1u);
  EXPECT_EQ(m.at("replication_log_csv"), "t.replications.csv");
}

}  // namespace
}  // namespace cttest
