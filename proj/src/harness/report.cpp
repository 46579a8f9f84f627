#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "arcl/errors.hpp"
#include "arcl/harness.hpp"

namespace arcl {

using nlohmann::json;

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t tab = line.find('\t', start);
    out.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) return out;
    start = tab + 1;
  }
}

double parse_double(const std::string& s, const fs::path& file, std::size_t line) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') {
    throw FormatError(file.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

unsigned long long parse_unsigned(const std::string& s, const fs::path& file, std::size_t line) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || *end != '\0') {
    throw FormatError(file.string() + ":" + std::to_string(line) + ": bad integer '" + s + "'");
  }
  return v;
}

Setting parse_setting(const std::string& s, const fs::path& file, std::size_t line) {
  if (s == "class_il") return Setting::ClassIncremental;
  if (s == "task_il") return Setting::TaskIncremental;
  throw FormatError(file.string() + ":" + std::to_string(line) + ": unknown setting '" + s + "'");
}

DataKind parse_kind(const std::string& s, const fs::path& file, std::size_t line) {
  if (s == "clean") return DataKind::Clean;
  if (s == "adversarial") return DataKind::Adversarial;
  throw FormatError(file.string() + ":" + std::to_string(line) + ": unknown data kind '" + s + "'");
}

std::string cell(double mean, double std, std::size_t n) {
  char buf[64];
  if (n > 1) std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, std);
  else std::snprintf(buf, sizeof buf, "%.2f", mean);
  return buf;
}

struct Agg {
  std::vector<double> values;
  std::string render() const {
    if (values.empty()) return "-";
    double m = 0.0;
    for (double v : values) m += v;
    m /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - m) * (v - m);
    const double sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    return cell(m, sd, values.size());
  }
};

// Column widths are measured in code points so that "±" aligns.
std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

std::string render_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& r : rows) {
    width.resize(std::max(width.size(), r.size()), 0);
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], display_width(r[c]));
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c) out << "  ";
      out << rows[i][c];
      if (c + 1 < rows[i].size()) out << std::string(width[c] - display_width(rows[i][c]), ' ');
    }
    out << '\n';
    if (i == 0) {
      std::size_t total = 0;
      for (std::size_t w : width) total += w + 2;
      out << std::string(total - 2, '-') << '\n';
    }
  }
  return out.str();
}

// Mean CRD/FRI/RRD keyed by (adversarial strategy, buffer).
std::map<std::pair<std::string, std::size_t>, std::map<std::string, Agg>> read_derived(const fs::path& dir) {
  std::map<std::pair<std::string, std::size_t>, std::map<std::string, Agg>> out;
  const fs::path file = dir / "derived.tsv";
  std::ifstream in(file);
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 6) throw FormatError(file.string() + ":" + std::to_string(n) + ": expected 6 columns");
    out[{f[2], parse_unsigned(f[3], file, n)}][f[4]].values.push_back(parse_double(f[5], file, n));
  }
  return out;
}

fs::path write_table(const fs::path& dir, const std::vector<ResultRow>& rows) {
  using Key = std::tuple<std::string, std::size_t, Setting, DataKind>;
  std::vector<Key> order;
  std::map<Key, std::map<std::string, Agg>> groups;
  for (const ResultRow& r : rows) {
    const Key k{r.strategy, r.buffer_size, r.setting, r.data_kind};
    if (!groups.count(k)) order.push_back(k);
    groups[k][r.metric].values.push_back(r.value);
  }
  const auto derived = read_derived(dir);

  std::vector<std::vector<std::string>> table;
  table.push_back({"strategy", "buffer", "setting", "data", "FAA", "Forgetting", "CRD", "FRI", "RRD"});
  for (const Key& k : order) {
    const auto& [strategy, buffer, setting, kind] = k;
    auto& m = groups[k];
    std::vector<std::string> row{strategy, std::to_string(buffer), to_string(setting), to_string(kind),
                                 m["faa"].render(), m["forgetting"].render()};
    auto it = derived.find({strategy, buffer});
    for (const char* name : {"crd", "fri", "rrd"}) {
      if (it == derived.end() || !it->second.count(name)) {
        row.push_back("-");
      } else {
        row.push_back(it->second.at(name).render());
      }
    }
    table.push_back(std::move(row));
  }
  const fs::path p = dir / "table.txt";
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << render_table(table);
  return p;
}

fs::path write_plotdata(const fs::path& dir, const std::vector<ResultRow>& rows) {
  const fs::path p = dir / "plotdata.tsv";
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << "run_id\tstrategy\tbuffer_size\tseed\tsetting\tdata_kind\tstage\taccuracy\n";
  std::set<std::string> seen;
  std::set<std::pair<Setting, DataKind>> wanted;
  for (const ResultRow& r : rows) wanted.insert({r.setting, r.data_kind});
  for (const ResultRow& r : rows) {
    if (!seen.insert(r.run_id).second) continue;
    const AccuracyMatrices acc = read_accuracy(dir / "runs" / r.run_id / "accuracy.json");
    for (Setting s : kSettings) {
      for (DataKind k : kDataKinds) {
        if (!wanted.count({s, k})) continue;
        const AccuracyMatrix& a = acc.get(k, s);
        for (int t = 0; t < a.tasks(); ++t) {
          if (!a.row_complete(t)) continue;
          double sum = 0.0;
          for (int i = 0; i <= t; ++i) sum += *a.at(t, i);
          char buf[40];
          std::snprintf(buf, sizeof buf, "%.17g", sum / (t + 1));
          out << r.run_id << '\t' << r.strategy << '\t' << r.buffer_size << '\t' << r.seed << '\t' << to_string(s)
              << '\t' << to_string(k) << '\t' << t + 1 << '\t' << buf << '\n';
        }
      }
    }
  }
  return p;
}

}  // namespace

std::vector<ResultRow> read_results(const fs::path& dir) {
  const fs::path file = dir / "results.tsv";
  std::ifstream in(file);
  if (!in) throw FormatError("no results table at " + file.string());
  std::string line;
  if (!std::getline(in, line) || split_tabs(line).size() != 8) {
    throw FormatError(file.string() + ": missing or malformed header");
  }
  std::vector<ResultRow> rows;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 8) throw FormatError(file.string() + ":" + std::to_string(n) + ": expected 8 columns");
    ResultRow r;
    r.run_id = f[0];
    r.seed = parse_unsigned(f[1], file, n);
    r.strategy = f[2];
    r.buffer_size = parse_unsigned(f[3], file, n);
    r.setting = parse_setting(f[4], file, n);
    r.data_kind = parse_kind(f[5], file, n);
    r.metric = f[6];
    r.value = parse_double(f[7], file, n);
    rows.push_back(std::move(r));
  }
  return rows;
}

AccuracyMatrices read_accuracy(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw FormatError("cannot read " + file.string());
  json j;
  try {
    in >> j;
    const int tasks = j.at("tasks").get<int>();
    AccuracyMatrices out(tasks);
    for (Setting s : kSettings) {
      for (DataKind k : kDataKinds) {
        const json& rows = j.at(to_string(s)).at(to_string(k));
        for (int r = 0; r < tasks; ++r) {
          for (int c = 0; c < tasks; ++c) {
            const json& v = rows.at(r).at(c);
            if (!v.is_null()) out.get(k, s).set(r, c, v.get<double>());
          }
        }
      }
    }
    return out;
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

ReportFormat parse_report_format(const std::string& s) {
  if (s == "table") return ReportFormat::Table;
  if (s == "plotdata") return ReportFormat::PlotData;
  throw ConfigError("format: expected table or plotdata, got '" + s + "'");
}

fs::path emit_report(const fs::path& dir, ReportFormat format) {
  const std::vector<ResultRow> rows = read_results(dir);
  if (rows.empty()) throw FormatError("report: results table in " + dir.string() + " is empty");
  return format == ReportFormat::Table ? write_table(dir, rows) : write_plotdata(dir, rows);
}

}  // namespace arcl
