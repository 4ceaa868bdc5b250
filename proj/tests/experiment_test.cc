#include "attest/experiment.h"

#include <gtest/gtest.h>

#include <fstream>
#include <json.hpp>

#include "attest/error.h"

namespace attest::experiment {
namespace {

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::kTrap;
}

TEST(Profiles, BuiltinsMatchTheTable) {
  const Profile e1 = BuiltinProfile("exp1");
  EXPECT_EQ(e1.vf.body_instructions, 428u);
  EXPECT_EQ(e1.vf.iterations, 100000u);
  EXPECT_FALSE(e1.vf.self_modifying);
  EXPECT_EQ(e1.vf.buffer_bytes, 524288u);
  const Profile e2 = BuiltinProfile("exp2");
  ASSERT_EQ(e2.attacks.size(), 1u);
  EXPECT_EQ(e2.attacks[0].variant, adversary::Variant::kNopInject);
  EXPECT_EQ(e2.attacks[0].count, 1u);
  const Profile e3 = BuiltinProfile("exp3");
  EXPECT_EQ(e3.vf.body_instructions, 8342u);
  EXPECT_EQ(e3.vf.iterations, 1000u);
  EXPECT_TRUE(e3.vf.self_modifying);
  const Profile e4 = BuiltinProfile("exp4");
  EXPECT_EQ(e4.vf.inner_iterations, 5000u);
  EXPECT_EQ(e4.vf.inner_instructions, 216u);
  EXPECT_EQ(CodeOf([] { BuiltinProfile("exp9"); }), ErrorCode::kConfigError);
  for (const auto& n : BuiltinProfileNames()) EXPECT_NO_THROW(BuiltinProfile(n)) << n;
}

TEST(Profiles, JsonRoundTrip) {
  Profile p = BuiltinProfile("exp3s");
  p.platform.device.global_mem_latency = 300;
  p.platform.launch.dp_offset = -16;
  p.attacks.push_back({});
  const Profile q = ProfileFromJson(ProfileToJson(p));
  EXPECT_EQ(q.name, p.name);
  EXPECT_EQ(q.vf, p.vf);
  EXPECT_EQ(q.platform.device.global_mem_latency, 300);
  EXPECT_EQ(q.platform.launch.dp_offset, -16);
  EXPECT_EQ(q.attacks.size(), 1u);
  EXPECT_EQ(ProfileToJson(q), ProfileToJson(p));
}

TEST(Profiles, OverridesApplyToBase) {
  const Profile p = ProfileFromJson(
      R"({"base": "quick", "vf": {"iterations": 50}, "device": {"warp_size": 2}})");
  EXPECT_EQ(p.vf.iterations, 50u);
  EXPECT_EQ(p.vf.body_instructions, 428u);
  EXPECT_EQ(p.platform.device.warp_size, 2);
  EXPECT_EQ(p.name, "quick+custom");
}

TEST(Profiles, BadFieldsAreConfigErrors) {
  for (const char* text : {
           R"({"device": {"warp_sz": 2}})",
           R"({"device": {"warp_size": "2"}})",
           R"({"launch": {"extra_entry": -1}})",
           R"({"vf": {"buffer_bytes": 1000}})",
           R"({"calibration_runs": 5})",
           R"({"speed": 1})",
           R"([1, 2])",
           R"({"device": {"num_sms": 0}})",
           "{",
       }) {
    EXPECT_EQ(CodeOf([&] { ProfileFromJson(text); }), ErrorCode::kConfigError) << text;
  }
}

TEST(Config, ParsesAndResolvesPaths) {
  const auto dir = std::filesystem::temp_directory_path() / "attest_cfg_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "p.json") << R"({"base": "quick", "name": "mine"})";
  }
  const ExperimentConfig c = ConfigFromJson(
      R"({"schema": 1, "profile": "p.json", "runs": 3, "seed": 9, "jitter": false,
          "clock": "result", "workers": 2, "csv": "out.csv",
          "attacks": [{"variant": "nop", "count": 2, "trials": 4}]})",
      dir);
  EXPECT_EQ(c.profile.name, "mine");
  EXPECT_EQ(c.runs, 3);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_FALSE(c.jitter);
  EXPECT_EQ(c.clock, Clock::kResult);
  EXPECT_EQ(c.workers, 2);
  EXPECT_EQ(c.csv, dir / "out.csv");
  ASSERT_EQ(c.attacks.size(), 1u);
  EXPECT_EQ(c.attacks[0].spec.count, 2u);
  EXPECT_EQ(c.attacks[0].trials, 4);
}

TEST(Config, RejectsInvalidConfigs) {
  for (const char* text : {
           R"({"runs": 0})",
           R"({"profile": "missing_file.json"})",
           R"({"vf_params": "missing.json"})",
           R"({"clock": "wall"})",
           R"({"schema": 2})",
           R"({"attacks": [{"count": 1}]})",
           R"({"attacks": [{"variant": "teleport"}]})",
           R"({"workers": 0})",
       }) {
    EXPECT_EQ(CodeOf([&] { ConfigFromJson(text); }), ErrorCode::kConfigError) << text;
  }
}

ExperimentConfig Quick(int workers, bool jitter = true) {
  ExperimentConfig c;
  c.profile = BuiltinProfile("quick");
  c.profile.vf.iterations = 100;
  c.runs = 6;
  c.seed = 3;
  c.jitter = jitter;
  c.workers = workers;
  return c;
}

TEST(Experiment, DeterministicCsvIsByteIdentical) {
  const ExperimentResult a = RunExperiment(Quick(1, false));
  const ExperimentResult b = RunExperiment(Quick(1, false));
  EXPECT_EQ(ToCsv(a), ToCsv(b));
  EXPECT_EQ(a.accepted(), 6);
}

TEST(Experiment, WorkerCountDoesNotChangeResults) {
  EXPECT_EQ(ToCsv(RunExperiment(Quick(1))), ToCsv(RunExperiment(Quick(3))));
}

TEST(Experiment, CsvShape) {
  const std::string csv = ToCsv(RunExperiment(Quick(1, false)));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "# schema=1 profile=quick");
  std::getline(in, line);
  EXPECT_EQ(line, "run,cycles,checksum,verdict,reason,t_avg,sigma,threshold,utilization");
  int rows = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 8) << line;
    if (line.rfind("summary", 0) == 0) {
      EXPECT_NE(line.find("6/6"), std::string::npos);
    } else {
      ++rows;
      EXPECT_NE(line.find(",accept,ok,"), std::string::npos) << line;
    }
  }
  EXPECT_EQ(rows, 6);
}

TEST(Experiment, AttackPlansAreSummarized) {
  ExperimentConfig c = Quick(1, false);
  AttackPlan nop;
  nop.trials = 3;
  c.attacks.push_back(nop);
  const ExperimentResult r = RunExperiment(c);
  ASSERT_EQ(r.attacks.size(), 1u);
  EXPECT_EQ(r.attacks[0].trials, 3);
  EXPECT_EQ(r.attacks[0].detected, 3);
  EXPECT_EQ(r.attacks[0].honest_accepted, 3);
  const auto j = nlohmann::json::parse(ToJson(r));
  EXPECT_EQ(j["schema"], 1);
  EXPECT_EQ(j["attacks"][0]["detected"], 3);
}

TEST(KernelBench, EmptyKernelCostsNothing) {
  Profile p = BuiltinProfile("quick");
  p.vf.iterations = 50;
  const KernelBenchRow r = RunKernelBench(p, "empty", 0, 1);
  EXPECT_EQ(r.baseline, 0u);
  EXPECT_EQ(r.attested, 0u);
  EXPECT_GT(r.verification, 0u);
  EXPECT_EQ(r.deviation(), 0.0);
}

TEST(KernelBench, AttestedPathMatchesBaseline) {
  Profile p = BuiltinProfile("quick");
  p.vf.iterations = 50;
  const uint32_t n = KernelIterationsFor(p, 50000);
  const KernelBenchRow r = RunKernelBench(p, "small", n, 1);
  EXPECT_NEAR(static_cast<double>(r.baseline), 50000.0, 500.0);
  EXPECT_LE(std::abs(r.deviation()), 0.005);
  RecordProperty("baseline", std::to_string(r.baseline));
  RecordProperty("attested", std::to_string(r.attested));
}

}  // namespace
}  // namespace attest::experiment
