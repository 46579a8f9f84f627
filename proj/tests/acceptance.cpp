// End-to-end acceptance: one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>

#include "arcl/checks.hpp"
#include "arcl/harness.hpp"

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Verdict {
  bool passed = false;
  std::string detail;
};

int failures = 0;

void report(int id, const char* title, const std::function<Verdict()>& body) {
  const auto start = Clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("threw: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  std::printf("%s criterion %d (%s) [%.1fs]: %s\n", v.passed ? "PASS" : "FAIL", id, title, secs, v.detail.c_str());
  std::fflush(stdout);
  if (!v.passed) ++failures;
}

Verdict from_check(const arcl::CheckResult& r, double limit_seconds) {
  Verdict v{r.passed && r.seconds < limit_seconds, r.detail};
  if (r.seconds >= limit_seconds) v.detail += " (over the time limit)";
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Mean over seeds of one metric from a summary-free scan of the result rows.
double mean_metric(const std::vector<arcl::ResultRow>& rows, const std::string& strategy, std::size_t buffer,
                   arcl::Setting setting, arcl::DataKind kind, const std::string& metric) {
  double sum = 0.0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.strategy == strategy && r.buffer_size == buffer && r.setting == setting && r.data_kind == kind &&
        r.metric == metric) {
      sum += r.value;
      ++n;
    }
  }
  if (n == 0) throw std::runtime_error("no rows for " + strategy + " " + metric);
  return sum / n;
}

arcl::Mlp load_model(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  return arcl::load_checkpoint(in);
}

}  // namespace

int main() {
  const std::uint64_t seed = 20240601;
  const fs::path work = fs::temp_directory_path() / ("arcl-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(work);

  report(1, "gradient correctness", [&] { return from_check(arcl::check_gradients(seed), 30.0); });
  report(2, "attack contract", [&] { return from_check(arcl::check_attack_contract(seed + 1), 60.0); });
  report(3, "calibration monotonicity",
         [&] { return from_check(arcl::check_calibration_monotonicity(seed + 2), 60.0); });
  report(4, "metric oracle", [&] { return from_check(arcl::check_metric_oracle(seed + 3), 60.0); });
  report(5, "raer invariant", [&] { return from_check(arcl::check_raer_invariant(seed + 4), 60.0); });

  // The preset grid carries the runs needed by criteria 6, 8 and 9.
  arcl::ExperimentConfig grid = arcl::preset("paper-analysis");
  grid.output_dir = work / "preset-a";
  std::vector<arcl::ResultRow> grid_rows;
  double grid_seconds = 0.0;
  std::string grid_error;
  try {
    const auto start = Clock::now();
    const auto s = arcl::run_experiment(grid, 1);
    grid_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (s.failures) grid_error = std::to_string(s.failures) + " preset runs failed";
    grid_rows = s.rows;
  } catch (const std::exception& e) {
    grid_error = e.what();
  }

  report(6, "forgetting acceleration", [&]() -> Verdict {
    if (!grid_error.empty()) return {false, grid_error};
    const double er = mean_metric(grid_rows, "er", 50, arcl::Setting::ClassIncremental, arcl::DataKind::Clean,
                                  "forgetting");
    const double at = mean_metric(grid_rows, "er+at", 50, arcl::Setting::ClassIncremental, arcl::DataKind::Clean,
                                  "forgetting");
    return {at > er && grid_seconds < 600.0, "class-il clean forgetting over 5 seeds: ER+AT " + num(at) + " vs ER " +
                                                 num(er) + " (grid took " + num(grid_seconds) + "s)"};
  });

  report(7, "method efficacy", [&]() -> Verdict {
    arcl::ExperimentConfig cfg = arcl::parse_config(fs::path(ARCL_SOURCE_DIR) / "configs" / "method-efficacy.json");
    cfg.output_dir = work / "efficacy";
    const auto start = Clock::now();
    const auto s = arcl::run_experiment(cfg, 1);
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (s.failures) return {false, std::to_string(s.failures) + " runs failed"};
    using arcl::DataKind;
    using arcl::Setting;
    const std::string base = "er+at", ours = "er+at+aflc+raer";
    const double f_base = mean_metric(s.rows, base, 50, Setting::ClassIncremental, DataKind::Clean, "forgetting");
    const double f_ours = mean_metric(s.rows, ours, 50, Setting::ClassIncremental, DataKind::Clean, "forgetting");
    const double c_base = mean_metric(s.rows, base, 50, Setting::ClassIncremental, DataKind::Adversarial, "faa");
    const double c_ours = mean_metric(s.rows, ours, 50, Setting::ClassIncremental, DataKind::Adversarial, "faa");
    const double t_base = mean_metric(s.rows, base, 50, Setting::TaskIncremental, DataKind::Adversarial, "faa");
    const double t_ours = mean_metric(s.rows, ours, 50, Setting::TaskIncremental, DataKind::Adversarial, "faa");
    const bool a = f_ours < f_base, b = c_ours >= c_base - 1.0, c = t_ours > t_base;
    return {a && b && c && secs < 1200.0,
            std::string("(a) clean forgetting ") + num(f_ours) + " vs " + num(f_base) + (a ? " ok" : " NO") +
                "; (b) robust FAA class-il " + num(c_ours) + " vs " + num(c_base) + (b ? " ok" : " NO") +
                "; (c) robust FAA task-il " + num(t_ours) + " vs " + num(t_base) + (c ? " ok" : " NO")};
  });

  report(8, "gradient obfuscation trend", [&]() -> Verdict {
    if (!grid_error.empty()) return {false, grid_error};
    double at50 = 0.0, at500 = 0.0;
    for (std::uint64_t s : grid.seeds) {
      const std::string tag = "_s" + std::to_string(s);
      const fs::path runs = grid.output_dir / "runs";
      const arcl::Mlp joint = load_model(runs / ("joint+at_b0" + tag) / "model.txt");
      const arcl::Mlp m50 = load_model(runs / ("er+at_b50" + tag) / "model.txt");
      const arcl::Mlp m500 = load_model(runs / ("er+at_b500" + tag) / "model.txt");
      const arcl::TaskStream stream = arcl::load_stream(grid.dataset, s);
      const arcl::Dataset test = arcl::concat(stream.test);
      const auto c50 = arcl::gradient_cosine(m50, joint, test.inputs, test.labels);
      const auto c500 = arcl::gradient_cosine(m500, joint, test.inputs, test.labels);
      if (!c50 || !c500) return {false, "all input gradients vanished for seed " + std::to_string(s)};
      at50 += c50->mean / grid.seeds.size();
      at500 += c500->mean / grid.seeds.size();
    }
    return {at500 > at50, "mean cosine to joint AT model over 5 seeds: buffer 500 " + num(at500) + " vs buffer 50 " +
                              num(at50)};
  });

  report(9, "determinism", [&]() -> Verdict {
    if (!grid_error.empty()) return {false, grid_error};
    arcl::ExperimentConfig again = grid;
    again.output_dir = work / "preset-b";
    const auto s = arcl::run_experiment(again, 2);
    if (s.failures) return {false, std::to_string(s.failures) + " runs failed on the rerun"};
    std::string differing;
    for (const char* f : {"results.tsv", "summary.tsv", "derived.tsv", "derived_summary.tsv"}) {
      if (slurp(grid.output_dir / f) != slurp(again.output_dir / f)) differing += std::string(" ") + f;
    }
    const std::size_t bytes = slurp(grid.output_dir / "results.tsv").size();
    return {differing.empty() && bytes > 0,
            differing.empty() ? "results tables byte-identical (" + std::to_string(bytes) +
                                    " bytes; rerun used 2 workers)"
                              : "differs:" + differing};
  });

  fs::remove_all(work);
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
