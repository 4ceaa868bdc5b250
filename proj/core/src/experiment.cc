#include "attest/experiment.h"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>
#include <variant>

#include "attest/error.h"
#include "attest/userkernel.h"

namespace attest::experiment {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void Bad(const std::string& what) { throw Error(ErrorCode::kConfigError, what); }

json Parse(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    Bad(std::string(what) + ": " + e.what());
  }
}

template <typename T>
using Field = std::variant<int T::*, uint32_t T::*, uint64_t T::*, int64_t T::*>;

template <typename T>
struct Named {
  const char* name;
  Field<T> field;
};

const std::vector<Named<device::DeviceConfig>>& DeviceFields() {
  using D = device::DeviceConfig;
  static const std::vector<Named<D>> f = {
      {"num_sms", &D::num_sms},
      {"max_warps_per_sm", &D::max_warps_per_sm},
      {"warp_size", &D::warp_size},
      {"sched_width", &D::sched_width},
      {"regs_per_sm", &D::regs_per_sm},
      {"regs_per_thread", &D::regs_per_thread},
      {"fma_dispatch_latency", &D::fma_dispatch_latency},
      {"alu_dispatch_latency", &D::alu_dispatch_latency},
      {"raw_dependency_latency", &D::raw_dependency_latency},
      {"global_mem_latency", &D::global_mem_latency},
      {"register_access_latency", &D::register_access_latency},
      {"shared_mem_latency", &D::shared_mem_latency},
      {"l0_icache_words", &D::l0_icache_words},
      {"l2_icache_bytes", &D::l2_icache_bytes},
      {"icache_line_bytes", &D::icache_line_bytes},
      {"icache_fetch_penalty", &D::icache_fetch_penalty},
      {"scratch_bytes", &D::scratch_bytes},
      {"cycle_budget", &D::cycle_budget},
  };
  return f;
}

const std::vector<Named<device::LaunchConfig>>& LaunchFields() {
  using L = device::LaunchConfig;
  static const std::vector<Named<L>> f = {
      {"warps_per_sm", &L::warps_per_sm},
      {"warps_per_block", &L::warps_per_block},
      {"regs_requested", &L::regs_requested},
      {"dp_offset", &L::dp_offset},
      {"extra_warps", &L::extra_warps},
      {"extra_entry", &L::extra_entry},
  };
  return f;
}

template <typename T>
void ReadFields(const json& j, T& out, const std::vector<Named<T>>& fields, const char* what) {
  if (!j.is_object()) Bad(std::string(what) + ": not an object");
  for (const auto& [key, value] : j.items()) {
    const auto it = std::find_if(fields.begin(), fields.end(),
                                 [&](const Named<T>& n) { return key == n.name; });
    if (it == fields.end()) Bad(std::string(what) + "." + key + ": unknown field");
    if (!value.is_number_integer()) Bad(std::string(what) + "." + key + ": expects an integer");
    std::visit(
        [&](auto member) {
          using V = std::remove_reference_t<decltype(out.*member)>;
          const auto v = value.template get<int64_t>();
          if (v < static_cast<int64_t>(std::numeric_limits<V>::min()) ||
              (v > 0 && static_cast<uint64_t>(v) > std::numeric_limits<V>::max())) {
            Bad(std::string(what) + "." + key + ": out of range");
          }
          out.*member = static_cast<V>(v);
        },
        it->field);
  }
}

template <typename T>
ordered_json WriteFields(const T& in, const std::vector<Named<T>>& fields) {
  ordered_json j;
  for (const auto& n : fields) std::visit([&](auto member) { j[n.name] = in.*member; }, n.field);
  return j;
}

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) Bad("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

adversary::AttackSpec SpecFromJson(const json& j) {
  if (!j.is_object()) Bad("attack: not an object");
  adversary::AttackSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "variant") s.variant = adversary::VariantFromName(value.get<std::string>());
      else if (key == "count") s.count = value.get<uint32_t>();
      else if (key == "words") s.words = value.get<std::vector<uint32_t>>();
      else if (key == "latency") s.latency = value.get<double>();
      else if (key == "warps") s.warps = value.get<int>();
      else if (key == "takeover_iterations") s.takeover_iterations = value.get<uint32_t>();
      else if (key != "trials") Bad("attack." + key + ": unknown field");
    } catch (const json::exception& e) {
      Bad("attack." + key + ": " + e.what());
    }
  }
  if (!j.contains("variant")) Bad("attack.variant: missing");
  return s;
}

ordered_json SpecToJson(const adversary::AttackSpec& s) {
  ordered_json j;
  j["variant"] = adversary::VariantName(s.variant);
  switch (s.variant) {
    case adversary::Variant::kNopInject: j["count"] = s.count; break;
    case adversary::Variant::kDataSubstitution: j["words"] = s.words; break;
    case adversary::Variant::kProxy: j["latency"] = s.latency; break;
    case adversary::Variant::kParallelTakeover:
      j["warps"] = s.warps;
      j["takeover_iterations"] = s.takeover_iterations;
      break;
    default: break;
  }
  return j;
}

// Runs fn(i) for i in [0, n) on `workers` threads.
template <typename Fn>
void ParallelFor(int n, int workers, Fn fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (int i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::string Hex(uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "0x%016" PRIx64, v);
  return buf;
}

// Shortest text that reads back to the same double.
std::string Num(double v) {
  char buf[32];
  for (int p = 6; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

}  // namespace

verifier::Platform DeskPlatform() {
  verifier::Platform p;
  p.device.num_sms = 1;
  p.device.warp_size = 4;
  p.device.sched_width = 1;
  p.device.max_warps_per_sm = 4;
  p.launch.warps_per_sm = 2;
  p.launch.warps_per_block = 1;
  return p;
}

std::vector<std::string> BuiltinProfileNames() {
  return {"exp1", "exp2", "exp3", "exp3s", "exp4", "quick"};
}

Profile BuiltinProfile(std::string_view name) {
  Profile p;
  p.name = std::string(name);
  p.platform = DeskPlatform();
  p.vf.buffer_bytes = 524288;
  if (name == "exp1" || name == "exp2" || name == "quick") {
    p.vf.body_instructions = 428;
    p.vf.iterations = name == "quick" ? 1000 : 100000;
    if (name == "exp2") {
      adversary::AttackSpec nop;
      nop.variant = adversary::Variant::kNopInject;
      p.attacks.push_back(nop);
    }
    if (name == "quick") p.calibration_runs = 30;
  } else if (name == "exp3" || name == "exp3s" || name == "exp4") {
    p.vf.body_instructions = 8342;
    p.vf.iterations = name == "exp3s" ? 100 : 1000;
    p.vf.self_modifying = true;
    if (name == "exp4") {
      p.vf.inner_iterations = 5000;
      p.vf.inner_instructions = 216;
      p.platform.device.cycle_budget = 10'000'000'000ull;
      p.calibration_runs = 30;
    }
  } else {
    Bad("unknown profile '" + std::string(name) + "'");
  }
  p.vf.Validate();
  return p;
}

Profile ProfileFromJson(std::string_view text) {
  const json j = Parse(text, "profile");
  if (!j.is_object()) Bad("profile: not an object");
  Profile p = BuiltinProfile(j.contains("base") ? j["base"].get<std::string>() : "exp1");
  if (j.contains("name")) p.name = j["name"].get<std::string>();
  else p.name += "+custom";
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "base" || key == "name") continue;
      if (key == "schema") {
        if (value.get<int>() != kSchemaVersion) Bad("profile.schema: unsupported version");
      } else if (key == "vf") {
        json merged = json::parse(vf::ParamsToJson(p.vf));
        merged.merge_patch(value);
        p.vf = vf::ParamsFromJson(merged.dump());
      } else if (key == "device") {
        ReadFields(value, p.platform.device, DeviceFields(), "device");
      } else if (key == "launch") {
        ReadFields(value, p.platform.launch, LaunchFields(), "launch");
      } else if (key == "calibration_runs") {
        p.calibration_runs = value.get<int>();
      } else if (key == "jitter") {
        p.jitter = value.get<bool>();
      } else if (key == "fill_seed") {
        p.fill_seed = value.get<uint64_t>();
      } else if (key == "attacks") {
        p.attacks.clear();
        for (const auto& a : value) p.attacks.push_back(SpecFromJson(a));
      } else {
        Bad("profile." + key + ": unknown field");
      }
    } catch (const json::exception& e) {
      Bad("profile." + key + ": " + e.what());
    }
  }
  if (p.calibration_runs < verifier::kMinCalibrationRuns) {
    Bad("profile.calibration_runs: at least 30 required");
  }
  p.platform.device.Validate();
  return p;
}

std::string ProfileToJson(const Profile& p) {
  ordered_json j;
  j["schema"] = kSchemaVersion;
  j["name"] = p.name;
  j["vf"] = ordered_json::parse(vf::ParamsToJson(p.vf));
  j["device"] = WriteFields(p.platform.device, DeviceFields());
  j["launch"] = WriteFields(p.platform.launch, LaunchFields());
  j["calibration_runs"] = p.calibration_runs;
  j["jitter"] = p.jitter;
  j["fill_seed"] = p.fill_seed;
  j["attacks"] = ordered_json::array();
  for (const auto& a : p.attacks) j["attacks"].push_back(SpecToJson(a));
  return j.dump(2);
}

Profile LoadProfile(const std::string& name_or_path) {
  const auto names = BuiltinProfileNames();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) {
    return BuiltinProfile(name_or_path);
  }
  if (!std::filesystem::exists(name_or_path)) {
    Bad("profile '" + name_or_path + "' is neither built in nor a file");
  }
  return ProfileFromJson(ReadFile(name_or_path));
}

adversary::AttackSpec AttackFromJson(const std::string& text) {
  return SpecFromJson(Parse(text, "attack"));
}

ExperimentConfig ConfigFromJson(std::string_view text, const std::filesystem::path& base_dir) {
  const json j = Parse(text, "config");
  if (!j.is_object()) Bad("config: not an object");
  ExperimentConfig c;
  auto path = [&](const json& v) {
    std::filesystem::path p = v.get<std::string>();
    return p.is_absolute() ? p : base_dir / p;
  };
  bool have_profile = false;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "schema") {
        if (value.get<int>() != kSchemaVersion) Bad("config.schema: unsupported version");
      } else if (key == "profile") {
        if (value.is_object()) {
          c.profile = ProfileFromJson(value.dump());
        } else {
          const std::string s = value.get<std::string>();
          const auto names = BuiltinProfileNames();
          const bool builtin = std::find(names.begin(), names.end(), s) != names.end();
          c.profile = LoadProfile(builtin ? s : path(value).string());
        }
        have_profile = true;
      } else if (key == "vf_params") {
        const auto p = path(value);
        if (!std::filesystem::exists(p)) Bad("config.vf_params: " + p.string() + " not found");
        c.profile.vf = vf::ParamsFromJson(ReadFile(p));
      } else if (key == "runs") {
        c.runs = value.get<int>();
      } else if (key == "seed") {
        c.seed = value.get<uint64_t>();
      } else if (key == "jitter") {
        c.jitter = value.get<bool>();
      } else if (key == "clock") {
        const std::string s = value.get<std::string>();
        if (s == "total") c.clock = Clock::kTotal;
        else if (s == "result") c.clock = Clock::kResult;
        else Bad("config.clock: expected \"total\" or \"result\"");
      } else if (key == "workers") {
        c.workers = value.get<int>();
      } else if (key == "calibration_runs") {
        c.profile.calibration_runs = value.get<int>();
      } else if (key == "attacks") {
        for (const auto& a : value) {
          AttackPlan plan{SpecFromJson(a), a.value("trials", 1)};
          if (plan.trials < 1) Bad("config.attacks.trials: at least 1");
          c.attacks.push_back(std::move(plan));
        }
      } else if (key == "csv") {
        c.csv = path(value);
      } else if (key == "json") {
        c.json = path(value);
      } else {
        Bad("config." + key + ": unknown field");
      }
    } catch (const json::exception& e) {
      Bad("config." + key + ": " + e.what());
    }
  }
  if (!have_profile) c.profile = BuiltinProfile("exp1");
  // "vf_params" may precede "profile" in the object; apply it last.
  if (j.contains("vf_params") && have_profile) c.profile.vf = vf::ParamsFromJson(ReadFile(path(j["vf_params"])));
  if (j.contains("calibration_runs")) c.profile.calibration_runs = j["calibration_runs"].get<int>();
  if (c.runs < 1) Bad("config.runs: at least 1");
  if (c.workers < 1) Bad("config.workers: at least 1");
  if (c.profile.calibration_runs < verifier::kMinCalibrationRuns) {
    Bad("config.calibration_runs: at least 30 required");
  }
  return c;
}

int ExperimentResult::accepted() const {
  int n = 0;
  for (const auto& r : rows) n += r.verdict.accepted;
  return n;
}

ExperimentResult RunExperiment(const ExperimentConfig& config) {
  const Profile& prof = config.profile;
  const vf::VFImage vf = vf::BuildVf(prof.vf, prof.fill_seed);
  const uint32_t iters = prof.vf.iterations;
  ExperimentResult out;
  out.profile = prof.name;
  out.model = verifier::Calibrate(vf, prof.platform, prof.calibration_runs, iters,
                                  config.seed ^ 0xC0FFEEull, config.jitter)
                  .model;

  // Challenges come from one stream in run order, so results do not depend on
  // the worker count.
  verifier::ChallengeGenerator gen(config.seed);
  std::vector<vf::Challenge> challenges;
  for (int i = 0; i < config.runs; ++i) {
    challenges.push_back(gen.Next(prof.platform.device.num_sms, iters));
  }
  const isa::Image bound = vf::BindIterations(vf, iters);
  const vf::Topology topo = prof.platform.topology();
  out.rows.resize(config.runs);
  std::vector<device::RunResult> runs(config.runs);
  ParallelFor(config.runs, config.workers, [&](int i) {
    const vf::Challenge& ch = challenges[i];
    const auto m = verifier::Measure(bound, ch, prof.platform, {config.jitter, ch.nonce});
    const uint64_t expected = vf::ChecksumReference(vf, ch, topo);
    const uint64_t cycles = config.clock == Clock::kTotal ? m.cycles : m.result_cycles;
    out.rows[i] = {i, cycles, m.checksum,
                   verifier::Verify(m.checksum, static_cast<double>(cycles), expected, out.model)};
    runs[i] = m.run;
  });
  uint64_t issued = 0, slots = 0;
  for (const auto& r : runs) {
    issued += r.issued;
    slots += r.issue_slots;
    out.stalls += r.stalls;
  }
  out.utilization = slots ? static_cast<double>(issued) / slots : 0;

  std::vector<AttackPlan> plans = config.attacks;
  if (plans.empty()) {
    for (const auto& a : prof.attacks) plans.push_back({a, 1});
  }
  for (size_t a = 0; a < plans.size(); ++a) {
    const AttackPlan& plan = plans[a];
    std::vector<adversary::DetectionReport> reports(plan.trials);
    ParallelFor(plan.trials, config.workers, [&](int t) {
      reports[t] = adversary::Evaluate(vf, prof.platform, out.model, iters, plan.spec,
                                       config.seed + 1000003ull * (a + 1) + t, config.jitter);
    });
    AttackSummary s;
    s.spec = plan.spec;
    s.trials = plan.trials;
    for (const auto& r : reports) {
      s.detected += r.detected();
      s.honest_accepted += r.honest.accepted;
      s.mean_overhead_per_iteration += r.overhead_per_iteration / plan.trials;
    }
    s.last = reports.back();
    out.attacks.push_back(std::move(s));
  }
  return out;
}

std::string ToCsv(const ExperimentResult& r) {
  std::ostringstream s;
  s << "# schema=" << kSchemaVersion << " profile=" << r.profile << "\n";
  s << "run,cycles,checksum,verdict,reason,t_avg,sigma,threshold,utilization\n";
  for (const auto& row : r.rows) {
    s << row.run << ',' << row.cycles << ',' << Hex(row.checksum) << ','
      << (row.verdict.accepted ? "accept" : "reject") << ','
      << verifier::ReasonName(row.verdict.reason) << ",,,,\n";
  }
  s << "summary,,,"
    << r.accepted() << '/' << r.rows.size() << ",," << Num(r.model.t_avg) << ','
    << Num(r.model.sigma) << ',' << Num(r.model.threshold) << ',' << Num(r.utilization) << "\n";
  return s.str();
}

std::string ToJson(const ExperimentResult& r) {
  ordered_json j;
  j["schema"] = kSchemaVersion;
  j["profile"] = r.profile;
  j["model"] = {{"t_avg", r.model.t_avg},
                {"sigma", r.model.sigma},
                {"threshold", r.model.threshold},
                {"runs", r.model.runs}};
  j["runs"] = r.rows.size();
  j["accepted"] = r.accepted();
  j["utilization"] = r.utilization;
  j["stalls"] = {{"icache", r.stalls.icache},
                 {"memory", r.stalls.memory},
                 {"pipeline", r.stalls.pipeline},
                 {"none", r.stalls.none}};
  j["attacks"] = ordered_json::array();
  for (const auto& a : r.attacks) {
    ordered_json x = SpecToJson(a.spec);
    x["trials"] = a.trials;
    x["detected"] = a.detected;
    x["honest_accepted"] = a.honest_accepted;
    x["mean_overhead_per_iteration"] = a.mean_overhead_per_iteration;
    x["last_reason"] = verifier::ReasonName(a.last.verdict.reason);
    j["attacks"].push_back(std::move(x));
  }
  return j.dump(2);
}

// --- user kernel ----------------------------------------------------------------

namespace {

struct KernelRig {
  vf::VFImage vfk;
  isa::Image bound;
  uint32_t base = 0;
  uint32_t halt = 0;
};

KernelRig MakeRig(const Profile& p) {
  KernelRig r;
  r.vfk = vf::BuildVf(p.vf, p.fill_seed);
  r.base = userkernel::ScratchWord(p.vf.buffer_bytes);
  userkernel::InlineLaunch(r.vfk, r.base);
  r.halt = r.vfk.image.code_words;
  r.bound = vf::BindIterations(r.vfk, p.vf.iterations);
  return r;
}

std::vector<isa::Instruction> Kernel(const KernelRig& rig, uint32_t iterations) {
  auto code = userkernel::MakeToyKernel(8, iterations, rig.base, rig.halt);
  if (code.empty()) {
    isa::Instruction bra;
    bra.opcode = isa::Opcode::kBra;
    bra.srcs[0] = isa::Operand::Imm(rig.halt);
    bra.control.stall = 1;
    code.push_back(bra);
  }
  return code;
}

verifier::Measurement RunRig(const Profile& p, const KernelRig& rig,
                             const std::vector<isa::Instruction>& code, bool kernel_only,
                             const vf::Challenge& ch) {
  verifier::Platform platform = p.platform;
  if (kernel_only) platform.launch.entry = rig.base;
  const auto bytes = userkernel::KernelBytes(code);
  const uint32_t offset = rig.base * static_cast<uint32_t>(isa::kWordBytes);
  return verifier::Measure(rig.bound, ch, platform, {p.jitter, ch.nonce},
                           [&](device::Machine& m) {
                             for (int sm = 0; sm < m.config().num_sms; ++sm) {
                               std::copy(bytes.begin(), bytes.end(),
                                         m.memory(sm).begin() + offset);
                             }
                           });
}

}  // namespace

double KernelBenchRow::deviation() const {
  if (baseline == 0) return attested == 0 ? 0.0 : 1.0;
  return (static_cast<double>(attested) - static_cast<double>(baseline)) / baseline;
}

KernelBenchRow RunKernelBench(const Profile& p, const std::string& name,
                              uint32_t kernel_iterations, uint64_t seed) {
  const KernelRig rig = MakeRig(p);
  verifier::ChallengeGenerator gen(seed);
  const vf::Challenge ch = gen.Next(p.platform.device.num_sms, p.vf.iterations);
  const auto halt_only = Kernel(rig, 0);

  KernelBenchRow row;
  row.name = name;
  row.kernel_iterations = kernel_iterations;
  const auto verification = RunRig(p, rig, halt_only, false, ch);
  if (verification.checksum != vf::ChecksumReference(rig.vfk, ch, p.platform.topology())) {
    throw std::logic_error("kernel bench: verification checksum disagrees with the reference");
  }
  row.verification = verification.cycles;
  if (kernel_iterations == 0) return row;
  const auto code = Kernel(rig, kernel_iterations);
  row.baseline = RunRig(p, rig, code, true, ch).cycles;
  row.attested = RunRig(p, rig, code, false, ch).cycles - row.verification;
  return row;
}

uint32_t KernelIterationsFor(const Profile& p, uint64_t cycles) {
  const KernelRig rig = MakeRig(p);
  verifier::ChallengeGenerator gen(1);
  const vf::Challenge ch = gen.Next(p.platform.device.num_sms, p.vf.iterations);
  const double a = static_cast<double>(RunRig(p, rig, Kernel(rig, 100), true, ch).cycles);
  const double b = static_cast<double>(RunRig(p, rig, Kernel(rig, 200), true, ch).cycles);
  const double per = (b - a) / 100;
  const double fixed = a - 100 * per;
  return static_cast<uint32_t>(std::max(1.0, std::round((cycles - fixed) / per)));
}

std::string KernelBenchJson(const std::vector<KernelBenchRow>& rows) {
  ordered_json j;
  j["schema"] = kSchemaVersion;
  j["kernels"] = ordered_json::array();
  for (const auto& r : rows) {
    j["kernels"].push_back({{"name", r.name},
                            {"kernel_iterations", r.kernel_iterations},
                            {"baseline_cycles", r.baseline},
                            {"verification_cycles", r.verification},
                            {"attested_cycles", r.attested},
                            {"deviation", r.deviation()}});
  }
  return j.dump(2);
}

}  // namespace attest::experiment
