// arcl: run experiment matrices, render reports, run the property suites.

#include <cstdio>
#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "arcl/checks.hpp"
#include "arcl/harness.hpp"

namespace {

int cmd_run(const std::string& config, const std::string& preset_name, const std::string& output, int jobs) {
  arcl::ExperimentConfig cfg = config.empty() ? arcl::preset(preset_name) : arcl::parse_config(config);
  if (!output.empty()) cfg.output_dir = output;
  std::cerr << "arcl: writing to " << cfg.output_dir.string() << '\n';
  const arcl::ExperimentSummary s = arcl::run_experiment(cfg, jobs, &std::cerr);
  std::cerr << "arcl: " << s.cells.size() - s.failures << '/' << s.cells.size() << " runs succeeded, "
            << s.rows.size() << " result rows\n";
  if (s.failures > 0) {
    std::cerr << "arcl: see " << (cfg.output_dir / "failures.txt").string() << '\n';
    return 1;
  }
  return 0;
}

int cmd_report(const std::string& dir, const std::string& format) {
  const auto path = arcl::emit_report(dir, arcl::parse_report_format(format));
  std::cerr << "arcl: wrote " << path.string() << '\n';
  if (format == "table") {
    std::FILE* f = std::fopen(path.c_str(), "r");
    if (f) {
      char buf[4096];
      for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, f)) > 0;) std::fwrite(buf, 1, n, stdout);
      std::fclose(f);
    }
  }
  return 0;
}

int cmd_check(std::uint64_t seed) {
  bool ok = true;
  for (const arcl::CheckResult& r : arcl::run_property_checks(seed)) {
    std::printf("%s %-26s %6.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarially robust memory-based continual learning experiments"};
  app.require_subcommand(1);

  std::string config, preset_name = "paper-analysis", output;
  int jobs = 1;
  auto* run = app.add_subcommand("run", "Run an experiment matrix");
  auto* config_opt = run->add_option("--config", config, "JSON experiment file")->check(CLI::ExistingFile);
  run->add_option("--preset", preset_name, "Built-in experiment preset")
      ->check(CLI::IsMember(arcl::preset_names()))
      ->excludes(config_opt);
  run->add_option("--output", output, "Output directory (overrides the config)");
  run->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  std::string dir, format = "table";
  auto* report = app.add_subcommand("report", "Render a results directory");
  report->add_option("--dir", dir, "Results directory")->required();
  report->add_option("--format", format, "table or plotdata")->check(CLI::IsMember({"table", "plotdata"}));

  std::uint64_t seed = 20240601;
  auto* check = app.add_subcommand("check", "Run the property and oracle suites");
  check->add_option("--seed", seed, "Seed for the randomized draws");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config, preset_name, output, jobs);
    if (*report) return cmd_report(dir, format);
    if (*check) return cmd_check(seed);
  } catch (const std::exception& e) {
    std::cerr << "arcl: error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
