#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "arcl/errors.hpp"
#include "arcl/harness.hpp"

namespace arcl {

using nlohmann::json;

namespace fs = std::filesystem;

namespace {

std::string format_value(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void close_out(std::ofstream& out, const fs::path& path) {
  out.close();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

bool buffer_free(const StrategyCell& s) { return s.joint || s.strategy.replay == Replay::None; }

json matrix_json(const AccuracyMatrix& a) {
  json rows = json::array();
  for (int r = 0; r < a.tasks(); ++r) {
    json row = json::array();
    for (int c = 0; c < a.tasks(); ++c) {
      const auto& v = a.at(r, c);
      row.push_back(v ? json(*v) : json(nullptr));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void persist_run(const fs::path& dir, const RunCell& cell, const StrategyCell& strategy, const RunResult& r) {
  fs::create_directories(dir);

  json acc;
  acc["run_id"] = cell.run_id;
  acc["strategy"] = strategy.label;
  acc["seed"] = cell.seed;
  acc["buffer_size"] = cell.buffer_size;
  acc["tasks"] = r.accuracy.m.front().tasks();
  for (Setting s : kSettings) {
    for (DataKind k : kDataKinds) acc[to_string(s)][to_string(k)] = matrix_json(r.accuracy.get(k, s));
  }
  {
    const fs::path p = dir / "accuracy.json";
    std::ofstream out = open_out(p);
    out << acc.dump(2) << '\n';
    close_out(out, p);
  }

  const CalibrationVector& cv = r.final_calibration;
  json cal;
  cal["task"] = cv.task;
  cal["alpha"] = cv.alpha;
  cal["further_prior"] = cv.further_prior;
  cal["v"] = std::vector<double>(cv.v.data(), cv.v.data() + cv.v.size());
  cal["counts"] = cv.counts;
  cal["zero_count_classes"] = cv.zero_count_classes;
  {
    const fs::path p = dir / "calibration.json";
    std::ofstream out = open_out(p);
    out << cal.dump(2) << '\n';
    close_out(out, p);
  }

  json diag;
  diag["head_norms"] = json::array();
  for (const HeadNormRecord& h : r.diagnostics.head_norms) {
    diag["head_norms"].push_back({{"task", h.task}, {"epoch", h.epoch}, {"clean", h.clean}, {"adversarial", h.adversarial}});
  }
  diag["warnings"] = r.diagnostics.warnings;
  {
    const fs::path p = dir / "diagnostics.json";
    std::ofstream out = open_out(p);
    out << diag.dump(2) << '\n';
    close_out(out, p);
  }
  {
    const fs::path p = dir / "epochs.log";
    std::ofstream out = open_out(p);
    for (const EpochLog& e : r.diagnostics.epochs) out << e.to_line() << '\n';
    close_out(out, p);
  }
  {
    const fs::path p = dir / "model.txt";
    std::ofstream out = open_out(p);
    save_checkpoint(r.checkpoints.back(), out);
    close_out(out, p);
  }
  {
    const fs::path p = dir / "buffer.tsv";
    std::ofstream out = open_out(p);
    dump(r.buffer, out);
    close_out(out, p);
  }
}

std::vector<ResultRow> rows_for(const ExperimentConfig& cfg, const RunCell& cell, const MetricReport& m) {
  std::vector<ResultRow> rows;
  const std::string& label = cfg.strategies[cell.strategy_index].label;
  for (Setting s : cfg.settings) {
    const SettingMetrics& sm = m.at(s);
    for (DataKind k : kDataKinds) {
      if (k == DataKind::Clean && !cfg.eval_clean) continue;
      if (k == DataKind::Adversarial && !cfg.eval.robust) continue;
      const bool clean = k == DataKind::Clean;
      rows.push_back({cell.run_id, cell.seed, label, cell.buffer_size, s, k, "faa", clean ? sm.faa_clean : sm.faa_adv});
      const auto& f = clean ? sm.forgetting_clean : sm.forgetting_adv;
      if (f) rows.push_back({cell.run_id, cell.seed, label, cell.buffer_size, s, k, "forgetting", *f});
    }
  }
  return rows;
}

struct Stat {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
};

Stat stat_of(const std::vector<double>& xs) {
  Stat s;
  s.n = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

// Groups values by key while keeping first-appearance order.
template <typename Key>
class OrderedGroups {
 public:
  void add(const Key& key, double v) {
    auto [it, fresh] = index_.try_emplace(key, keys_.size());
    if (fresh) {
      keys_.push_back(key);
      values_.emplace_back();
    }
    values_[it->second].push_back(v);
  }
  std::size_t size() const { return keys_.size(); }
  const Key& key(std::size_t i) const { return keys_[i]; }
  Stat stat(std::size_t i) const { return stat_of(values_[i]); }

 private:
  std::map<Key, std::size_t> index_;
  std::vector<Key> keys_;
  std::vector<std::vector<double>> values_;
};

void write_results(const fs::path& dir, const std::vector<ResultRow>& rows) {
  const fs::path p = dir / "results.tsv";
  std::ofstream out = open_out(p);
  out << "run_id\tseed\tstrategy\tbuffer_size\tsetting\tdata_kind\tmetric\tvalue\n";
  for (const ResultRow& r : rows) {
    out << r.run_id << '\t' << r.seed << '\t' << r.strategy << '\t' << r.buffer_size << '\t'
        << to_string(r.setting) << '\t' << to_string(r.data_kind) << '\t' << r.metric << '\t'
        << format_value(r.value) << '\n';
  }
  close_out(out, p);
}

void write_summary(const fs::path& dir, const std::vector<ResultRow>& rows) {
  using Key = std::tuple<std::string, std::size_t, std::string, std::string, std::string>;
  OrderedGroups<Key> groups;
  for (const ResultRow& r : rows) {
    groups.add({r.strategy, r.buffer_size, to_string(r.setting), to_string(r.data_kind), r.metric}, r.value);
  }
  const fs::path p = dir / "summary.tsv";
  std::ofstream out = open_out(p);
  out << "strategy\tbuffer_size\tsetting\tdata_kind\tmetric\tn\tmean\tstd\n";
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& [strategy, buffer, setting, kind, metric] = groups.key(i);
    const Stat s = groups.stat(i);
    out << strategy << '\t' << buffer << '\t' << setting << '\t' << kind << '\t' << metric << '\t' << s.n << '\t'
        << format_value(s.mean) << '\t' << format_value(s.std) << '\n';
  }
  close_out(out, p);
}

struct JointBaselines {
  std::optional<std::size_t> standard;
  std::optional<std::size_t> adversarial;
};

JointBaselines find_joint(const ExperimentConfig& cfg) {
  JointBaselines j;
  for (std::size_t i = 0; i < cfg.strategies.size(); ++i) {
    const StrategyCell& s = cfg.strategies[i];
    if (!s.joint) continue;
    if (s.strategy.defense == Defense::None) {
      if (!j.standard) j.standard = i;
    } else if (!j.adversarial) {
      j.adversarial = i;
    }
  }
  return j;
}

// Standard/adversarial continual pairs sharing a replay method.
std::vector<std::pair<std::size_t, std::size_t>> derived_pairs(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t a = 0; a < cfg.strategies.size(); ++a) {
    const StrategyCell& std_cell = cfg.strategies[a];
    if (std_cell.joint || std_cell.strategy.defense != Defense::None) continue;
    for (std::size_t b = 0; b < cfg.strategies.size(); ++b) {
      const StrategyCell& adv = cfg.strategies[b];
      if (adv.joint || adv.strategy.defense == Defense::None) continue;
      if (adv.strategy.replay != std_cell.strategy.replay) continue;
      pairs.emplace_back(a, b);
    }
  }
  return pairs;
}

void write_derived(const fs::path& dir, const ExperimentConfig& cfg, const std::vector<CellOutcome>& outcomes) {
  const JointBaselines joint = find_joint(cfg);
  std::map<std::tuple<std::uint64_t, std::size_t, std::size_t>, const MetricReport*> by_cell;
  for (const CellOutcome& o : outcomes) {
    if (o.metrics) by_cell[{o.cell.seed, o.cell.strategy_index, o.cell.buffer_size}] = &*o.metrics;
  }
  auto lookup = [&](std::uint64_t seed, std::size_t strategy, std::size_t buffer) -> const MetricReport* {
    if (buffer_free(cfg.strategies[strategy])) buffer = 0;
    auto it = by_cell.find({seed, strategy, buffer});
    return it == by_cell.end() ? nullptr : it->second;
  };

  const fs::path p = dir / "derived.tsv";
  std::ofstream out = open_out(p);
  out << "seed\tstrategy_std\tstrategy_adv\tbuffer_size\tmetric\tvalue\n";
  using Key = std::tuple<std::string, std::string, std::size_t, std::string>;
  OrderedGroups<Key> groups;
  for (const auto& [a, b] : derived_pairs(cfg)) {
    const std::vector<std::size_t> buffers =
        buffer_free(cfg.strategies[a]) ? std::vector<std::size_t>{0} : cfg.buffer_sizes;
    for (std::size_t buffer : buffers) {
      for (std::uint64_t seed : cfg.seeds) {
        DerivedInputs in{lookup(seed, a, buffer), lookup(seed, b, buffer), lookup(seed, *joint.standard, 0),
                         lookup(seed, *joint.adversarial, 0)};
        if (!in.continual_std || !in.continual_adv || !in.joint_std || !in.joint_adv) continue;
        const DerivedMetrics d = derived_metrics(in, true);
        const std::pair<const char*, double> values[] = {{"crd", d.crd}, {"fri", d.fri}, {"rrd", *d.rrd}};
        for (const auto& [name, v] : values) {
          out << seed << '\t' << cfg.strategies[a].label << '\t' << cfg.strategies[b].label << '\t' << buffer << '\t'
              << name << '\t' << format_value(v) << '\n';
          groups.add({cfg.strategies[a].label, cfg.strategies[b].label, buffer, name}, v);
        }
      }
    }
  }
  close_out(out, p);

  const fs::path ps = dir / "derived_summary.tsv";
  std::ofstream sum = open_out(ps);
  sum << "strategy_std\tstrategy_adv\tbuffer_size\tmetric\tn\tmean\tstd\n";
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& [sa, sb, buffer, metric] = groups.key(i);
    const Stat s = groups.stat(i);
    sum << sa << '\t' << sb << '\t' << buffer << '\t' << metric << '\t' << s.n << '\t' << format_value(s.mean) << '\t'
        << format_value(s.std) << '\n';
  }
  close_out(sum, ps);
}

void check_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".write-test";
  {
    std::ofstream out(probe);
    if (!out) throw std::runtime_error("output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

}  // namespace

TaskStream load_stream(const DatasetConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == DatasetConfig::Kind::Synthetic) {
    SyntheticSpec spec = cfg.synthetic;
    spec.seed += seed;
    return make_synthetic_stream(spec);
  }
  const Dataset train = load_idx(cfg.train_images, cfg.train_labels);
  const Dataset test = load_idx(cfg.test_images, cfg.test_labels);
  return split_by_class(train, test, cfg.num_tasks);
}

std::vector<RunCell> expand_cells(const ExperimentConfig& cfg) {
  std::vector<RunCell> cells;
  for (std::size_t s = 0; s < cfg.strategies.size(); ++s) {
    const bool once = buffer_free(cfg.strategies[s]);
    const std::vector<std::size_t> buffers = once ? std::vector<std::size_t>{0} : cfg.buffer_sizes;
    for (std::size_t buffer : buffers) {
      for (std::uint64_t seed : cfg.seeds) {
        RunCell c;
        c.seed = seed;
        c.strategy_index = s;
        c.buffer_size = buffer;
        c.run_id = cfg.strategies[s].label + "_b" + std::to_string(buffer) + "_s" + std::to_string(seed);
        cells.push_back(std::move(c));
      }
    }
  }
  return cells;
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg, int jobs, std::ostream* progress) {
  cfg.validate();
  if (jobs < 1) throw ConfigError("jobs: expected a positive integer");
  if (cfg.derived) {
    const JointBaselines joint = find_joint(cfg);
    if (!joint.standard || !joint.adversarial) {
      throw ConfigError(
          "derived_metrics: missing joint baseline (add strategies with replay \"joint\" and defense none and at)");
    }
  }
  check_writable(cfg.output_dir);

  ExperimentSummary summary;
  const std::vector<RunCell> cells = expand_cells(cfg);
  summary.cells.resize(cells.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex log_mutex;

  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const RunCell& cell = cells[i];
      CellOutcome& outcome = summary.cells[i];
      outcome.cell = cell;
      try {
        const StrategyCell& strategy = cfg.strategies[cell.strategy_index];
        const TaskStream stream = load_stream(cfg.dataset, cell.seed);
        TrainConfig train = cfg.train;
        train.buffer_size = cell.buffer_size;
        train.seed = cell.seed;
        const RunResult result = strategy.joint ? run_joint(stream, strategy.strategy, train, cfg.eval)
                                                : run_stream(stream, strategy.strategy, train, cfg.eval);
        persist_run(cfg.output_dir / "runs" / cell.run_id, cell, strategy, result);
        outcome.metrics = metric_report(result.accuracy);
      } catch (const std::exception& e) {
        outcome.error = e.what();
      }
      const std::size_t n = ++done;
      if (progress) {
        std::lock_guard lock(log_mutex);
        *progress << '[' << n << '/' << cells.size() << "] " << cell.run_id
                  << (outcome.error.empty() ? " done" : " FAILED: " + outcome.error) << '\n';
      }
    }
  };
  const int workers = std::min<int>(jobs, static_cast<int>(cells.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (std::thread& t : pool) t.join();

  std::ostringstream failures;
  for (const CellOutcome& o : summary.cells) {
    if (!o.metrics) {
      ++summary.failures;
      failures << o.cell.run_id << '\t' << o.error << '\n';
      continue;
    }
    auto rows = rows_for(cfg, o.cell, *o.metrics);
    summary.rows.insert(summary.rows.end(), rows.begin(), rows.end());
  }

  write_results(cfg.output_dir, summary.rows);
  write_summary(cfg.output_dir, summary.rows);
  if (cfg.derived) write_derived(cfg.output_dir, cfg, summary.cells);
  const fs::path failure_file = cfg.output_dir / "failures.txt";
  if (summary.failures > 0) {
    std::ofstream out = open_out(failure_file);
    out << failures.str();
    close_out(out, failure_file);
  } else {
    std::error_code ec;
    fs::remove(failure_file, ec);
  }
  return summary;
}

}  // namespace arcl
