// attest: command line front end for the attestation toolkit.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "attest/adversary.h"
#include "attest/error.h"
#include "attest/experiment.h"
#include "attest/image.h"
#include "attest/sake.h"
#include "attest/trng.h"
#include "attest/verifier.h"
#include "attest/vf.h"

namespace {

using namespace attest;
using nlohmann::ordered_json;

struct Globals {
  std::string profile = "quick";
  uint64_t seed = 1;
  bool deterministic = false;
  std::string out;
};

// Writes to --out, or stdout when it is empty.
void Emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  const std::filesystem::path parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kConfigError, "cannot write " + path);
  f << text;
}

std::string ReadText(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfigError, "cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

experiment::Profile Profile(const Globals& g) {
  experiment::Profile p = experiment::LoadProfile(g.profile);
  if (g.deterministic) p.jitter = false;
  return p;
}

std::string ModelJson(const verifier::TimingModel& m) {
  ordered_json j;
  j["schema"] = experiment::kSchemaVersion;
  j["t_avg"] = m.t_avg;
  j["sigma"] = m.sigma;
  j["threshold"] = m.threshold;
  j["runs"] = m.runs;
  j["mode"] = m.mode == verifier::ThresholdMode::kNormal ? "normal" : "quantile";
  return j.dump(2);
}

// --- build ----------------------------------------------------------------------

struct BuildArgs {
  bool dump_asm = false;
  std::string image;
};

int Build(const Globals& g, const BuildArgs& a) {
  const experiment::Profile p = Profile(g);
  const vf::VFImage vf = vf::BuildVf(p.vf, p.fill_seed);
  if (!a.image.empty()) isa::WriteImageFile(a.image, vf::BindIterations(vf, p.vf.iterations));
  if (a.dump_asm) {
    Emit(g.out, vf::DumpAsm(vf));
    return 0;
  }
  ordered_json j;
  j["schema"] = experiment::kSchemaVersion;
  j["profile"] = p.name;
  j["params"] = ordered_json::parse(vf::ParamsToJson(p.vf));
  j["code_words"] = vf.image.code_words;
  j["entry"] = vf.layout.entry;
  j["loop_begin"] = vf.layout.loop_begin;
  j["loop_end"] = vf.layout.loop_end;
  j["body_instructions"] = vf.layout.body_instructions();
  j["blocks"] = vf.layout.blocks.size();
  j["sites"] = vf.layout.num_sites;
  Emit(g.out, j.dump(2));
  return 0;
}

// --- calibrate ------------------------------------------------------------------

struct CalibrateArgs {
  int runs = 0;
  std::string samples;
  bool quantile = false;
};

int Calibrate(const Globals& g, const CalibrateArgs& a) {
  const auto mode = a.quantile ? verifier::ThresholdMode::kQuantile
                               : verifier::ThresholdMode::kNormal;
  if (!a.samples.empty()) {
    std::istringstream in(ReadText(a.samples));
    std::vector<double> xs;
    for (double x; in >> x;) xs.push_back(x);
    Emit(g.out, ModelJson(verifier::ModelFromSamples(xs, mode)));
    return 0;
  }
  const experiment::Profile p = Profile(g);
  const vf::VFImage vf = vf::BuildVf(p.vf, p.fill_seed);
  const int runs = a.runs ? a.runs : p.calibration_runs;
  const auto c = verifier::Calibrate(vf, p.platform, runs, p.vf.iterations, g.seed, p.jitter, mode);
  Emit(g.out, ModelJson(c.model));
  return 0;
}

// --- verify ---------------------------------------------------------------------

struct VerifyArgs {
  std::string config;
  int runs = 0;
  int workers = 0;
  std::string clock;
  std::string json;
};

int Verify(const Globals& g, const VerifyArgs& a) {
  experiment::ExperimentConfig c;
  if (!a.config.empty()) {
    const std::filesystem::path path = a.config;
    c = experiment::ConfigFromJson(ReadText(a.config), path.parent_path());
  } else {
    c.profile = Profile(g);
    c.seed = g.seed;
    c.jitter = c.profile.jitter;
  }
  if (g.deterministic) c.jitter = false;
  if (a.runs) c.runs = a.runs;
  if (a.workers) c.workers = a.workers;
  if (a.clock == "result") c.clock = experiment::Clock::kResult;
  if (!a.json.empty()) c.json = a.json;
  if (!g.out.empty()) c.csv = g.out;

  const experiment::ExperimentResult r = experiment::RunExperiment(c);
  Emit(c.csv.string(), experiment::ToCsv(r));
  if (!c.json.empty()) Emit(c.json.string(), experiment::ToJson(r));
  bool ok = r.accepted() == static_cast<int>(r.rows.size());
  for (const auto& s : r.attacks) ok = ok && s.detected == s.trials;
  return ok ? 0 : 1;
}

// --- attack ---------------------------------------------------------------------

struct AttackArgs {
  std::string variant = "nop";
  uint32_t count = 1;
  std::vector<uint32_t> words;
  double latency = 1000;
  int warps = 1;
  int trials = 1;
};

int Attack(const Globals& g, const AttackArgs& a) {
  experiment::ExperimentConfig c;
  c.profile = Profile(g);
  c.seed = g.seed;
  c.jitter = c.profile.jitter;
  c.runs = 1;
  experiment::AttackPlan plan;
  plan.spec.variant = adversary::VariantFromName(a.variant);
  plan.spec.count = a.count;
  plan.spec.words = a.words;
  plan.spec.latency = a.latency;
  plan.spec.warps = a.warps;
  plan.trials = a.trials;
  c.attacks.push_back(plan);
  const experiment::ExperimentResult r = experiment::RunExperiment(c);
  Emit(g.out, experiment::ToJson(r));
  return r.attacks[0].detected == r.attacks[0].trials ? 0 : 1;
}

// --- sake -----------------------------------------------------------------------

struct SakeArgs {
  std::string group = "test";
  std::string tamper;
  int bit = 0;
  double delay = 0;
  double latency = 10;
  bool expect_abort = false;
};

int Sake(const Globals& g, const SakeArgs& a) {
  const experiment::Profile p = Profile(g);
  const vf::VFImage vf = vf::BuildVf(p.vf, p.fill_seed);
  const isa::Image bound = vf::BindIterations(vf, p.vf.iterations);
  const vf::Topology topo = p.platform.topology();
  const auto model =
      verifier::Calibrate(vf, p.platform, p.calibration_runs, p.vf.iterations, g.seed, p.jitter)
          .model;

  sake::DhGroup group;
  if (a.group == "test") group = sake::DhGroup::Test();
  else if (a.group == "modp2048") group = sake::DhGroup::Modp2048();
  else throw Error(ErrorCode::kConfigError, "--group expects test or modp2048");

  crypto::Csprng vrng(g.seed), drng(g.seed ^ 0x5A5A5A5Aull);
  sake::VerifierSession::Options opts;
  opts.num_sms = p.platform.device.num_sms;
  opts.iterations = p.vf.iterations;
  sake::VerifierSession verifier(
      group, vrng, model, [&](const vf::Challenge& ch) { return vf::ChecksumReference(vf, ch, topo); },
      opts);
  sake::DeviceSession device(group, drng);

  std::optional<sake::MsgType> target;
  if (!a.tamper.empty()) {
    for (int t = 1; t <= 6; ++t) {
      if (sake::MsgTypeName(static_cast<sake::MsgType>(t)) == a.tamper) {
        target = static_cast<sake::MsgType>(t);
      }
    }
    if (!target) throw Error(ErrorCode::kConfigError, "--tamper: unknown message " + a.tamper);
  }
  sake::Channel channel(a.latency, [&](sake::Message& m, double& delay) {
    if (target && m.type == *target && !m.payload.empty()) {
      const size_t bit = static_cast<size_t>(a.bit) % (m.payload.size() * 8);
      m.payload[bit / 8] ^= static_cast<uint8_t>(1u << (bit % 8));
    }
    if (m.type == sake::MsgType::kW2Mac) delay += a.delay * model.threshold;
  });
  const sake::Prover prover = [&](const vf::Challenge& ch) {
    const auto m = verifier::Measure(bound, ch, p.platform, {p.jitter, ch.nonce});
    return sake::ProverRun{m.checksum, static_cast<double>(m.cycles)};
  };

  std::vector<sake::TranscriptEntry> transcript;
  ordered_json j;
  j["schema"] = experiment::kSchemaVersion;
  j["group"] = a.group;
  bool aborted = false;
  try {
    const sake::ProtocolResult r = sake::RunProtocol(verifier, device, channel, prover, &transcript);
    j["outcome"] = "established";
    j["keys_agree"] = r.verifier_key == r.device_key;
    j["elapsed"] = r.elapsed;
  } catch (const Error& e) {
    aborted = true;
    j["outcome"] = std::string(ErrorCodeName(e.code()));
    j["message"] = e.what();
  }
  j["bound"] = verifier.bound();
  j["transcript"] = ordered_json::parse(sake::TranscriptJson(transcript));
  Emit(g.out, j.dump(2));
  return aborted == a.expect_abort ? 0 : 1;
}

// --- trng -----------------------------------------------------------------------

struct TrngArgs {
  size_t bytes = 65536;
  int workers = 4;
  std::string report;
};

int Trng(const Globals& g, const TrngArgs& a) {
  const auto sample = trng::Harvest(a.workers, a.bytes);
  if (!g.out.empty()) {
    std::ofstream f(g.out, std::ios::binary);
    f.write(reinterpret_cast<const char*>(sample.data()), static_cast<std::streamsize>(sample.size()));
  }
  const trng::EntropyReport r = trng::Report(sample);
  ordered_json j;
  j["schema"] = experiment::kSchemaVersion;
  j["bytes"] = r.bytes;
  j["bits_per_byte"] = r.bits_per_byte;
  j["chi_square"] = r.chi_square;
  j["chi_square_p"] = r.chi_square_p;
  j["monobit"] = r.monobit;
  j["mean"] = r.mean;
  j["passes"] = r.PassesMonobit() && r.PassesChiSquare();
  Emit(a.report, j.dump(2));
  return r.PassesMonobit() && r.PassesChiSquare() ? 0 : 1;
}

// --- kernel-bench ---------------------------------------------------------------

struct KernelArgs {
  uint64_t small = 50576;
  uint64_t large = 215000000;
  double tolerance = 0.005;
};

int KernelBench(const Globals& g, const KernelArgs& a) {
  const experiment::Profile p = Profile(g);
  std::vector<experiment::KernelBenchRow> rows;
  for (const auto& [name, cycles] : {std::pair{"small", a.small}, std::pair{"large", a.large}}) {
    if (cycles == 0) continue;
    rows.push_back(experiment::RunKernelBench(p, name, experiment::KernelIterationsFor(p, cycles),
                                              g.seed));
  }
  Emit(g.out, experiment::KernelBenchJson(rows));
  for (const auto& r : rows) {
    if (std::abs(r.deviation()) > a.tolerance) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Timing-based GPU attestation toolkit on a simulated accelerator"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--profile", g.profile,
                 "Built-in profile (exp1, exp2, exp3, exp3s, exp4, quick) or profile JSON path")
      ->capture_default_str();
  app.add_option("--seed", g.seed, "Seed for challenges and calibration")->capture_default_str();
  app.add_flag("--deterministic", g.deterministic, "Disable memory latency jitter");
  app.add_option("--out", g.out, "Output file (default stdout)");

  BuildArgs ba;
  auto* build = app.add_subcommand("build", "Generate the VF image for a profile");
  build->add_flag("--dump-asm", ba.dump_asm, "Print the assembly listing");
  build->add_option("--image", ba.image, "Write the bound binary image here");

  CalibrateArgs ca;
  auto* cal = app.add_subcommand("calibrate", "Fit the timing model from honest runs");
  cal->add_option("--runs", ca.runs, "Honest runs (default: profile)")->check(CLI::Range(30, 1000000));
  cal->add_option("--samples", ca.samples, "Fit from a file of timings instead")->check(CLI::ExistingFile);
  cal->add_flag("--quantile", ca.quantile, "Empirical quantile threshold");

  VerifyArgs va;
  auto* ver = app.add_subcommand("verify", "Run attestation rounds and write CSV");
  ver->add_option("--config", va.config, "Experiment config JSON")->check(CLI::ExistingFile);
  ver->add_option("--runs", va.runs, "Verification runs")->check(CLI::PositiveNumber);
  ver->add_option("--workers", va.workers, "Worker threads")->check(CLI::PositiveNumber);
  ver->add_option("--clock", va.clock, "total or result")->check(CLI::IsMember({"total", "result"}));
  ver->add_option("--json", va.json, "Also write a JSON summary");

  AttackArgs aa;
  auto* att = app.add_subcommand("attack", "Evaluate one attack against a calibrated verifier");
  att->add_option("--variant", aa.variant, "nop, memcopy_b, memcopy_c, memcopy_d, data_substitution, "
                                           "proxy, parallel_takeover, toctou_swap, precompute_replay")
      ->capture_default_str();
  att->add_option("--count", aa.count, "NOPs to insert")->capture_default_str();
  att->add_option("--words", aa.words, "Modified word indices")->delimiter(',');
  att->add_option("--latency", aa.latency, "Proxy latency each way, cycles")->capture_default_str();
  att->add_option("--warps", aa.warps, "Takeover warps")->capture_default_str();
  att->add_option("--trials", aa.trials, "Independent trials")->check(CLI::PositiveNumber);

  SakeArgs sa;
  auto* sk = app.add_subcommand("sake", "Run the key establishment protocol over a simulated channel");
  sk->add_option("--group", sa.group, "test or modp2048")->capture_default_str();
  sk->add_option("--tamper", sa.tamper, "Flip a bit in this message (V2, W2MAC, V1, W1K, V0, W0)");
  sk->add_option("--bit", sa.bit, "Bit position to flip")->capture_default_str();
  sk->add_option("--delay", sa.delay, "Extra delay on the commitment, as a fraction of the threshold");
  sk->add_option("--latency", sa.latency, "Channel latency, cycles")->capture_default_str();
  sk->add_flag("--expect-abort", sa.expect_abort, "Succeed only if the protocol aborts");

  TrngArgs ta;
  auto* tr = app.add_subcommand("trng", "Harvest race-condition randomness and report statistics");
  tr->add_option("--bytes", ta.bytes, "Bytes to produce")->capture_default_str();
  tr->add_option("--workers", ta.workers, "Racing threads")->capture_default_str();
  tr->add_option("--report", ta.report, "Report JSON path (default stdout)");

  KernelArgs ka;
  auto* kb = app.add_subcommand("kernel-bench", "User-kernel overhead after verification");
  kb->add_option("--small", ka.small, "Target cycles of the small kernel (0 skips)")->capture_default_str();
  kb->add_option("--large", ka.large, "Target cycles of the large kernel (0 skips)")->capture_default_str();
  kb->add_option("--tolerance", ka.tolerance, "Allowed relative deviation")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*build) return Build(g, ba);
    if (*cal) return Calibrate(g, ca);
    if (*ver) return Verify(g, va);
    if (*att) return Attack(g, aa);
    if (*sk) return Sake(g, sa);
    if (*tr) return Trng(g, ta);
    if (*kb) return KernelBench(g, ka);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
