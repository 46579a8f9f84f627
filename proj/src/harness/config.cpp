#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "arcl/errors.hpp"
#include "arcl/harness.hpp"

namespace arcl {

using nlohmann::json;

namespace {

// Consumes the keys of one JSON object, so leftovers can be reported.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where("") + ": expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  const json* raw(const std::string& key) {
    used_.insert(key);
    auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  template <typename T>
  T get(const std::string& key, T fallback, const char* form) {
    const json* v = raw(key);
    if (!v) return fallback;
    return convert<T>(*v, key, form);
  }

  template <typename T>
  T convert(const json& v, const std::string& key, const char* form) const {
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw json::type_error::create(302, "", &v);
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw json::type_error::create(302, "", &v);
        if constexpr (std::is_unsigned_v<T>) {
          if (v.get<long long>() < 0) throw ConfigError(where(key) + ": expected " + form);
        }
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw json::type_error::create(302, "", &v);
      }
      return v.get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + ": expected " + form + ", got " + v.dump());
    }
  }

  std::string where(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "config" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown key \"" + where(it.key()) + "\"");
    }
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename Fn>
auto rethrow_as_config(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    if (msg.rfind(key, 0) == 0) throw;
    throw ConfigError(key + ": " + msg);
  }
}

void read_attack(const json& node, const std::string& path, AttackConfig& a) {
  Section s(node, path);
  a.epsilon = s.get("epsilon", a.epsilon, "a number >= 0");
  a.step_size = s.get("step_size", a.step_size, "a number > 0");
  a.steps = s.get("steps", a.steps, "an integer >= 0");
  a.random_start = s.get("random_start", a.random_start, "true or false");
  s.finish();
  rethrow_as_config(path, [&] { a.validate(); });
}

DatasetConfig read_dataset(const json& node) {
  Section s(node, "dataset");
  DatasetConfig d;
  const std::string kind = s.get<std::string>("kind", "synthetic", "\"synthetic\" or \"idx\"");
  if (kind == "synthetic") {
    SyntheticSpec& sp = d.synthetic;
    sp.num_classes = s.get("num_classes", sp.num_classes, "a positive integer");
    sp.input_dim = s.get("input_dim", sp.input_dim, "a positive integer");
    sp.per_class_train = s.get("per_class_train", sp.per_class_train, "a positive integer");
    sp.per_class_test = s.get("per_class_test", sp.per_class_test, "a positive integer");
    sp.num_tasks = s.get("num_tasks", sp.num_tasks, "a positive integer");
    sp.spread = s.get("spread", sp.spread, "a number >= 0");
    sp.seed = s.get("seed", sp.seed, "an integer >= 0");
    d.num_tasks = sp.num_tasks;
  } else if (kind == "idx") {
    d.kind = DatasetConfig::Kind::Idx;
    const char* form = "a file path";
    d.train_images = s.get<std::string>("train_images", "", form);
    d.train_labels = s.get<std::string>("train_labels", "", form);
    d.test_images = s.get<std::string>("test_images", "", form);
    d.test_labels = s.get<std::string>("test_labels", "", form);
    d.num_tasks = s.get("num_tasks", d.num_tasks, "a positive integer");
    for (const auto& [key, p] : {std::pair{"train_images", d.train_images}, std::pair{"train_labels", d.train_labels},
                                 std::pair{"test_images", d.test_images}, std::pair{"test_labels", d.test_labels}}) {
      if (p.empty()) throw ConfigError(std::string("dataset.") + key + ": required for kind \"idx\"");
    }
  } else {
    throw ConfigError("dataset.kind: expected \"synthetic\" or \"idx\", got \"" + kind + "\"");
  }
  s.finish();
  if (d.num_tasks <= 0) throw ConfigError("dataset.num_tasks: expected a positive integer");
  return d;
}

StrategyCell read_strategy(const json& node, const std::string& path) {
  Section s(node, path);
  StrategyCell cell;
  StrategyConfig& st = cell.strategy;
  const std::string replay = s.get<std::string>("replay", "er", "one of none|sgd|er|der|derpp|joint");
  if (replay == "joint") {
    cell.joint = true;
    st.replay = Replay::None;
  } else {
    st.replay = rethrow_as_config(path + ".replay", [&] { return parse_replay(replay); });
  }
  const std::string defense = s.get<std::string>("defense", "none", "one of none|at|trades|fat");
  st.defense = rethrow_as_config(path + ".defense", [&] { return parse_defense(defense); });

  if (const json* a = s.raw("aflc")) {
    if (a->is_boolean()) {
      st.aflc.enabled = a->get<bool>();
    } else {
      Section as(*a, path + ".aflc");
      st.aflc.enabled = as.get("enabled", true, "true or false");
      st.aflc.alpha = as.get("alpha", st.aflc.alpha, "a number");
      st.aflc.further_prior = as.get("further_prior", st.aflc.further_prior, "true or false");
      as.finish();
    }
  }
  if (const json* r = s.raw("raer")) {
    if (r->is_boolean()) {
      st.raer.enabled = r->get<bool>();
    } else {
      Section rs(*r, path + ".raer");
      st.raer.enabled = rs.get("enabled", true, "true or false");
      st.raer.rho = rs.get("rho", st.raer.rho, "an integer >= 0");
      rs.finish();
      if (st.raer.rho < 0) throw ConfigError(path + ".raer.rho: expected an integer >= 0, got " +
                                             std::to_string(st.raer.rho));
    }
  }
  st.masking = s.get("masking", st.masking, "true or false");
  st.der_alpha = s.get("der_alpha", st.der_alpha, "a number >= 0");
  if (s.has("derpp_beta")) {
    st.derpp_beta = s.get("derpp_beta", 0.0, "a number >= 0");
  } else if (st.replay == Replay::DERpp) {
    st.derpp_beta = 0.5;
  }
  st.trades_beta = s.get("trades_beta", st.trades_beta, "a number >= 0");

  std::string auto_label = cell.joint ? "joint" : to_string(st.replay);
  if (st.defense != Defense::None) auto_label += std::string("+") + to_string(st.defense);
  if (st.aflc.enabled) auto_label += "+aflc";
  if (st.raer.enabled) auto_label += "+raer";
  if (st.masking) auto_label += "+mask";
  cell.label = s.get("label", auto_label, "a string");
  s.finish();

  if (cell.label.empty() || cell.label.find_first_of("\t\n/ ") != std::string::npos) {
    throw ConfigError(path + ".label: expected a non-empty name without spaces, tabs or slashes");
  }
  rethrow_as_config(path, [&] { st.validate(); });
  return cell;
}

void read_train(const json& node, TrainConfig& t) {
  Section s(node, "train");
  t.epochs_per_task = s.get("epochs_per_task", t.epochs_per_task, "a positive integer");
  t.batch_size = s.get("batch_size", t.batch_size, "a positive integer");
  t.learning_rate = s.get("learning_rate", t.learning_rate, "a number > 0");
  t.hidden_layers = s.get("hidden_layers", t.hidden_layers, "a list of positive integers");
  if (const json* a = s.raw("attack")) read_attack(*a, "train.attack", t.attack);
  s.finish();
  rethrow_as_config("train", [&] { t.validate(); });
}

void read_eval(const json& node, ExperimentConfig& cfg) {
  Section s(node, "eval");
  if (const json* attacks = s.raw("attacks")) {
    const auto names = s.convert<std::vector<std::string>>(*attacks, "attacks",
                                                           "a list drawn from clean|pgd20|adaptive_pgd20");
    cfg.eval_clean = false;
    cfg.eval.robust = false;
    cfg.eval.adaptive = false;
    for (const std::string& n : names) {
      if (n == "clean") {
        cfg.eval_clean = true;
      } else if (n == "pgd20" || n == "adaptive_pgd20") {
        if (cfg.eval.robust) throw ConfigError("eval.attacks: pgd20 and adaptive_pgd20 are exclusive");
        cfg.eval.robust = true;
        cfg.eval.adaptive = n == "adaptive_pgd20";
      } else {
        throw ConfigError("eval.attacks: expected clean|pgd20|adaptive_pgd20, got \"" + n + "\"");
      }
    }
    if (names.empty()) throw ConfigError("eval.attacks: expected at least one entry");
  }
  if (const json* settings = s.raw("settings")) {
    const auto names = s.convert<std::vector<std::string>>(*settings, "settings", "a list drawn from class_il|task_il");
    cfg.settings.clear();
    for (const std::string& n : names) {
      if (n == "class_il") cfg.settings.push_back(Setting::ClassIncremental);
      else if (n == "task_il") cfg.settings.push_back(Setting::TaskIncremental);
      else throw ConfigError("eval.settings: expected class_il|task_il, got \"" + n + "\"");
    }
    if (cfg.settings.empty()) throw ConfigError("eval.settings: expected at least one entry");
  }
  if (const json* a = s.raw("attack")) read_attack(*a, "eval.attack", cfg.eval.attack);
  s.finish();
}

}  // namespace

std::filesystem::path default_output_root() {
  const char* root = std::getenv("ARCL_OUTPUT_ROOT");
  return root && *root ? std::filesystem::path(root) : std::filesystem::path("arcl-results");
}

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds: expected at least one seed");
  if (strategies.empty()) throw ConfigError("strategies: expected at least one strategy");
  if (buffer_sizes.empty()) throw ConfigError("buffer_sizes: expected at least one size");
  std::set<std::string> labels;
  for (const StrategyCell& c : strategies) {
    if (!labels.insert(c.label).second) throw ConfigError("strategies: duplicate label \"" + c.label + "\"");
    c.strategy.validate();
  }
  train.validate();
  eval.attack.validate();
  if (output_dir.empty()) throw ConfigError("output_dir: expected a directory path");
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& stem) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  Section s(root, "");
  ExperimentConfig cfg;

  const json* dataset = s.raw("dataset");
  if (!dataset) throw ConfigError("dataset: required");
  cfg.dataset = read_dataset(*dataset);

  const json* one = s.raw("strategy");
  const json* many = s.raw("strategies");
  if (one && many) throw ConfigError("strategy: give either \"strategy\" or \"strategies\", not both");
  if (!one && !many) throw ConfigError("strategy: required (an object, or \"strategies\" as a list)");
  if (one) {
    cfg.strategies.push_back(read_strategy(*one, "strategy"));
  } else {
    if (!many->is_array()) throw ConfigError("strategies: expected a list of strategy objects");
    for (std::size_t i = 0; i < many->size(); ++i) {
      cfg.strategies.push_back(read_strategy((*many)[i], "strategies[" + std::to_string(i) + "]"));
    }
  }

  if (s.has("buffer_size") && s.has("buffer_sizes")) {
    throw ConfigError("buffer_size: give either \"buffer_size\" or \"buffer_sizes\", not both");
  }
  if (s.has("buffer_size")) {
    cfg.buffer_sizes = {s.get<std::size_t>("buffer_size", 0, "an integer >= 0")};
  } else {
    s.raw("buffer_size");
    cfg.buffer_sizes = s.get("buffer_sizes", cfg.buffer_sizes, "a list of integers >= 0");
  }
  if (const json* t = s.raw("train")) read_train(*t, cfg.train);
  if (const json* e = s.raw("eval")) read_eval(*e, cfg);
  cfg.seeds = s.get("seeds", cfg.seeds, "a non-empty list of integers >= 0");
  cfg.derived = s.get("derived", cfg.derived, "true or false");
  const std::string out = s.get<std::string>("output_dir", "", "a directory path");
  cfg.output_dir = out.empty() ? default_output_root() / stem : std::filesystem::path(out);
  s.finish();

  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  ExperimentConfig cfg = parse_config_text(text.str(), path.stem().string());
  // Relative data paths are taken relative to the config file.
  DatasetConfig& d = cfg.dataset;
  for (std::filesystem::path* p : {&d.train_images, &d.train_labels, &d.test_images, &d.test_labels}) {
    if (!p->empty() && p->is_relative()) *p = path.parent_path() / *p;
  }
  return cfg;
}

std::vector<std::string> preset_names() { return {"paper-analysis"}; }

ExperimentConfig preset(const std::string& name) {
  if (name != "paper-analysis") {
    throw ConfigError("preset: unknown preset \"" + name + "\" (available: paper-analysis)");
  }
  ExperimentConfig cfg;
  cfg.dataset.synthetic.seed = 1000;
  cfg.buffer_sizes = {50, 500};
  cfg.seeds = {0, 1, 2, 3, 4};
  cfg.derived = true;
  cfg.output_dir = default_output_root() / name;
  const std::pair<const char*, Replay> replays[] = {
      {"sgd", Replay::None}, {"joint", Replay::None}, {"er", Replay::ER}, {"der", Replay::DER}, {"derpp", Replay::DERpp}};
  for (const auto& [label, replay] : replays) {
    for (Defense d : {Defense::None, Defense::AT}) {
      StrategyCell cell;
      cell.label = label;
      if (d == Defense::AT) cell.label += "+at";
      cell.joint = std::string(label) == "joint";
      cell.strategy.replay = replay;
      cell.strategy.defense = d;
      if (replay == Replay::DERpp) cell.strategy.derpp_beta = 0.5;
      cfg.strategies.push_back(cell);
    }
  }
  cfg.validate();
  return cfg;
}

}  // namespace arcl
