#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mpl/error.hpp"
#include "mpl/experiment.hpp"
#include "mpl/ops.hpp"

namespace fs = std::filesystem;
using namespace mpl;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kNumeric = 3, kIo = 4 };

fs::path resolve_output(const std::string& flag, const std::string& from_config,
                        const char* default_name) {
  if (!flag.empty()) return flag;
  if (!from_config.empty()) return from_config;
  if (const char* dir = std::getenv("MPL_OUTPUT_DIR"); dir && *dir) {
    return fs::path(dir) / default_name;
  }
  return default_name;
}

fault::Site parse_site(const std::string& s) {
  if (s == "matmul") return fault::Site::matmul;
  if (s == "gelu") return fault::Site::gelu;
  if (s == "layernorm") return fault::Site::layernorm;
  if (s == "softmax") return fault::Site::softmax;
  if (s == "none") return fault::Site::none;
  throw ConfigError("unknown fault site '" + s + "'");
}

int cmd_run(const std::string& path, std::optional<std::uint64_t> seed,
            const std::string& out) {
  ExperimentConfig config = load_config(path);
  if (seed) config.seeds = {*seed};
  const fs::path target = resolve_output(out, config.output, "report.json");
  const Report report = run_experiment(config);
  write_json(report_to_json(report), target);

  std::printf("protocol %s, %zu seed(s), %zu trainable parameters\n",
              std::string(protocol_name(config.protocol)).c_str(),
              report.runs.size(), report.trainable_parameters);
  for (const auto& [name, m] : report.runs.front().metrics) {
    const Summary s = report.accuracy(name);
    std::printf("  %-12s accuracy %.4f +/- %.4f\n", name.c_str(), s.mean, s.std);
  }
  std::printf("report written to %s\n", target.string().c_str());
  return kOk;
}

int cmd_gradcheck(const std::string& path, std::optional<std::uint64_t> seed,
                  const std::string& out, const std::string& site) {
  ExperimentConfig config = load_config(path);
  if (seed) config.seeds = {*seed};
  fault::inject(parse_site(site));
  const GradCheckReport r = run_gradcheck(config);
  fault::inject(fault::Site::none);

  std::printf("parameters %zu in %zu tensors\n", r.parameters, r.names.size());
  std::printf("max relative error %.3e (tolerance %.1e) at %s[%zu]\n",
              r.result.max_rel_error, config.gradcheck.tolerance,
              r.names[r.result.worst_param].c_str(), r.result.worst_index);
  std::printf("analytic %.10e numeric %.10e\n", r.result.analytic,
              r.result.numeric);
  std::printf("%s in %.1f s\n", r.passed ? "PASS" : "FAIL", r.wall_time_seconds);
  if (!out.empty()) {
    Json j;
    j["passed"] = r.passed;
    j["max_rel_error"] = r.result.max_rel_error;
    j["tolerance"] = config.gradcheck.tolerance;
    j["parameters"] = r.parameters;
    j["worst_parameter"] = r.names[r.result.worst_param];
    j["worst_index"] = r.result.worst_index;
    j["wall_time_seconds"] = r.wall_time_seconds;
    write_json(j, out);
  }
  return r.passed ? kOk : kNumeric;
}

int cmd_profile(const std::string& path, std::size_t patches, std::size_t layers,
                std::size_t width, std::size_t mlp_ratio, const std::string& out) {
  const ScheduleSpec spec = load_schedule_spec(path);
  const PromptSchedule schedule = spec.build(layers);
  const ContextProfile profile =
      context_length_profile(schedule, patches, width, mlp_ratio);
  std::fputs(format_profile(schedule, profile).c_str(), stdout);
  Json j = profile_to_json(schedule, profile);
  j["patches"] = patches;
  j["width"] = width;
  j["mlp_ratio"] = mlp_ratio;
  j["schedule"] = schedule_spec_to_json(spec);
  const fs::path target = resolve_output(out, "", "profile.json");
  write_json(j, target);
  std::printf("profile written to %s\n", target.string().c_str());
  return kOk;
}

int cmd_synth(const std::string& dir, const SyntheticSpec& spec) {
  const FewShotDataset ds = make_synthetic_dataset(spec);
  write_dataset(ds, dir);
  std::printf("%zu images, %zu classes written to %s\n", ds.size(),
              ds.num_classes(), dir.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Modular prompt learning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::optional<std::uint64_t> seed;
  std::string out;
  app.add_option("--seed", seed, "Run a single seed instead of the config's list");
  app.add_option("--out", out, "Output file (default: $MPL_OUTPUT_DIR or cwd)");

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run the configured experiment");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();

  std::string fault_site = "none";
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  grad->add_option("config", config_path, "Experiment config (JSON)")->required();
  grad->add_option("--fault", fault_site, "Corrupt one backward rule (testing)")
      ->group("");

  std::string schedule_path;
  std::size_t patches = 196, layers = 12, width = 768, mlp_ratio = 4;
  auto* prof = app.add_subcommand("profile", "Per-layer context lengths and cost");
  prof->add_option("schedule", schedule_path, "Schedule file (JSON)")->required();
  prof->add_option("--patches", patches, "Number of image patches")->capture_default_str();
  prof->add_option("--layers", layers, "Encoder depth")->capture_default_str();
  prof->add_option("--width", width, "Token width")->capture_default_str();
  prof->add_option("--mlp-ratio", mlp_ratio, "MLP expansion")->capture_default_str();

  std::string synth_dir;
  SyntheticSpec spec;
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("dir", synth_dir, "Output directory")->required();
  synth->add_option("--classes", spec.classes)->capture_default_str();
  synth->add_option("--per-class", spec.per_class)->capture_default_str();
  synth->add_option("--noise", spec.noise)->capture_default_str();
  synth->add_option("--data-seed", spec.seed)->capture_default_str();
  synth->add_option("--shift", spec.prototype_shift)->capture_default_str();
  synth->add_option("--shift-seed", spec.shift_seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*run) return cmd_run(config_path, seed, out);
    if (*grad) return cmd_gradcheck(config_path, seed, out, fault_site);
    if (*prof) return cmd_profile(schedule_path, patches, layers, width, mlp_ratio, out);
    if (*synth) return cmd_synth(synth_dir, spec);
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const DeterminismError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ScheduleError& e) {
    std::cerr << "schedule error: " << e.what() << '\n';
    return kConfig;
  } catch (const VocabError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const LengthError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOther;
}
