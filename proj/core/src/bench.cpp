#include "shiftbench/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "shiftbench/analysis.hpp"
#include "shiftbench/error.hpp"

namespace shiftbench {

// --- tasks ---------------------------------------------------------------------------

const std::vector<std::string>& generator_names() {
  static const std::vector<std::string> names{"toy1d",     "two_moons", "support_a", "support_b",
                                              "support_c", "support_d", "csv"};
  return names;
}

void TaskSpec::validate() const {
  if (std::find(generator_names().begin(), generator_names().end(), generator) == generator_names().end()) {
    std::string msg = "unknown generator '" + generator + "'; valid:";
    for (const auto& g : generator_names()) msg += " " + g;
    throw ConfigError(msg);
  }
  if (name.empty()) throw ConfigError("task name is empty");
  if (name.find_first_of(",\n\"") != std::string::npos) throw ConfigError("task name may not contain , or quotes");
  if (generator == "toy1d" && !(c >= 0.0 && c <= 0.5 && d > 0.5 && d <= 1.0)) {
    throw ConfigError("toy1d needs 0 <= c <= 0.5 < d <= 1");
  }
  if (generator == "toy1d" && n_target == 0) throw ConfigError("n_target must be > 0");
  if (generator != "toy1d" && generator != "csv" && (n_src == 0 || n_tgt == 0)) {
    throw ConfigError("n_src and n_tgt must be > 0");
  }
  if (generator == "csv" && csv_path.empty()) throw ConfigError("csv task needs a csv path");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
  weak.validate();
  strong.validate();
}

DomainDataset TaskSpec::make(std::uint64_t seed) const {
  if (generator == "toy1d") return gen_toy1d(c, d, n_target, seed);
  if (generator == "two_moons") {
    TwoMoonsParams p;
    p.n_src = n_src;
    p.n_tgt = n_tgt;
    p.rotation_deg = rotation;
    p.translation = {translation_x, translation_y};
    p.noise_sigma = noise;
    return gen_two_moons_shift(p, seed);
  }
  if (generator.rfind("support_", 0) == 0) return gen_support_scenario(generator.back(), n_src, n_tgt, seed);
  if (generator == "csv") return load_csv(csv_path, CsvSchema{num_classes, name});
  throw ConfigError("unknown generator '" + generator + "'");
}

// --- config ----------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (tasks.empty()) throw ConfigError("config has no [task]");
  if (methods.empty()) throw ConfigError("config lists no methods");
  if (seeds.empty()) throw ConfigError("config lists no seeds");
  for (const auto& t : tasks) t.validate();
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = i + 1; j < tasks.size(); ++j)
      if (tasks[i].name == tasks[j].name) throw ConfigError("duplicate task name '" + tasks[i].name + "'");
  for (const auto& m : methods) (void)MethodSpec::parse(m);
  train.ssl.validate();
  train.uda.validate();
  if (train.steps == 0) throw ConfigError("steps must be > 0");
  if (train.batch_labeled == 0 || train.batch_unlabeled == 0) throw ConfigError("batch sizes must be >= 1");
  if (train.eval_every == 0) throw ConfigError("eval_every must be >= 1");
  if (train.stump_thresholds == 0) throw ConfigError("stump_thresholds must be >= 1");
}

TrainConfig ExperimentConfig::train_config(const std::string& method, const TaskSpec& task, std::uint64_t seed) const {
  TrainConfig tc;
  tc.total_steps = train.steps;
  tc.batch_labeled = train.batch_labeled;
  tc.batch_unlabeled = train.batch_unlabeled;
  tc.eval_every = train.eval_every;
  tc.seed = seed;
  tc.loss_route = train.route;
  tc.uda_ramp_up_fraction = train.uda_ramp_up;
  tc.optimizer.base_lr = train.lr;
  tc.optimizer.momentum = train.momentum;
  tc.optimizer.classifier_lr_multiplier = train.classifier_lr_multiplier;
  tc.optimizer.weight_decay = train.weight_decay;
  tc.model.hidden_dims = train.hidden;
  tc.model.feature_dim = train.feature_dim;
  tc.method = MethodSpec::parse(method);
  if (tc.method.ssl) {
    const SslMethod m = tc.method.ssl->method;
    *tc.method.ssl = train.ssl;
    tc.method.ssl->method = m;
    tc.method.ssl->weak = task.weak;
    tc.method.ssl->strong = task.strong;
    if (task.vat_epsilon) tc.method.ssl->vat_epsilon = *task.vat_epsilon;
  }
  if (tc.method.uda) {
    const UdaMethod m = tc.method.uda->method;
    *tc.method.uda = train.uda;
    tc.method.uda->method = m;
  }
  return tc;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(x)) throw ConfigError("expected a number, got '" + v + "'");
  return x;
}

std::size_t to_size(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("expected a non-negative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(std::stoull(v));
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + v + "'");
}

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < xs.size(); ++i) os << (i ? ", " : "") << xs[i];
  return os.str();
}

using Setter = std::function<void(const std::string&)>;

std::map<std::string, Setter> task_keys(TaskSpec& t) {
  auto aug = [&t](auto member) {
    return [&t, member](const std::string& v) {
      t.weak.*member = to_double(v);
      t.strong.*member = to_double(v);
    };
  };
  return {
      {"name", [&t](const std::string& v) { t.name = v; }},
      {"generator", [&t](const std::string& v) { t.generator = v; }},
      {"c", [&t](const std::string& v) { t.c = to_double(v); }},
      {"d", [&t](const std::string& v) { t.d = to_double(v); }},
      {"n_target", [&t](const std::string& v) { t.n_target = to_size(v); }},
      {"n_src", [&t](const std::string& v) { t.n_src = to_size(v); }},
      {"n_tgt", [&t](const std::string& v) { t.n_tgt = to_size(v); }},
      {"rotation", [&t](const std::string& v) { t.rotation = to_double(v); }},
      {"translation",
       [&t](const std::string& v) {
         auto xs = split_list(v);
         if (xs.size() != 2) throw ConfigError("translation needs two numbers");
         t.translation_x = to_double(xs[0]);
         t.translation_y = to_double(xs[1]);
       }},
      {"noise", [&t](const std::string& v) { t.noise = to_double(v); }},
      {"csv", [&t](const std::string& v) { t.csv_path = v; }},
      {"num_classes", [&t](const std::string& v) { t.num_classes = to_size(v); }},
      {"weak_sigma", aug(&AugmentationSpec::weak_noise_sigma)},
      {"strong_sigma", aug(&AugmentationSpec::strong_noise_sigma)},
      {"dropout", aug(&AugmentationSpec::dropout_prob)},
      {"aug_rotation", aug(&AugmentationSpec::rotation_deg)},
      {"vat_epsilon",
       [&t](const std::string& v) {
         t.vat_epsilon = to_double(v);
         if (*t.vat_epsilon < 0.0) throw ConfigError("vat epsilon must be >= 0");
       }},
  };
}

std::map<std::string, Setter> train_keys(TrainSettings& s) {
  return {
      {"steps", [&s](const std::string& v) { s.steps = to_size(v); }},
      {"batch_labeled", [&s](const std::string& v) { s.batch_labeled = to_size(v); }},
      {"batch_unlabeled", [&s](const std::string& v) { s.batch_unlabeled = to_size(v); }},
      {"eval_every", [&s](const std::string& v) { s.eval_every = to_size(v); }},
      {"lr", [&s](const std::string& v) { s.lr = to_double(v); }},
      {"momentum", [&s](const std::string& v) { s.momentum = to_double(v); }},
      {"classifier_lr_multiplier", [&s](const std::string& v) { s.classifier_lr_multiplier = to_double(v); }},
      {"weight_decay", [&s](const std::string& v) { s.weight_decay = to_double(v); }},
      {"route", [&s](const std::string& v) { s.route = parse_route(v); }},
      {"uda_ramp_up", [&s](const std::string& v) { s.uda_ramp_up = to_double(v); }},
      {"hidden",
       [&s](const std::string& v) {
         s.hidden.clear();
         for (const auto& x : split_list(v)) s.hidden.push_back(to_size(x));
       }},
      {"feature_dim", [&s](const std::string& v) { s.feature_dim = to_size(v); }},
      {"ssl_weight", [&s](const std::string& v) { s.ssl.weight = to_double(v); }},
      {"ramp_up", [&s](const std::string& v) { s.ssl.ramp_up_fraction = to_double(v); }},
      {"tau", [&s](const std::string& v) { s.ssl.confidence_threshold = to_double(v); }},
      {"sharpen_temperature", [&s](const std::string& v) { s.ssl.sharpen_temperature = to_double(v); }},
      {"mixup_alpha", [&s](const std::string& v) { s.ssl.mixup_alpha = to_double(v); }},
      {"mixmatch_augmentations", [&s](const std::string& v) { s.ssl.mixmatch_augmentations = to_size(v); }},
      {"vat_epsilon", [&s](const std::string& v) { s.ssl.vat_epsilon = to_double(v); }},
      {"vat_xi", [&s](const std::string& v) { s.ssl.vat_xi = to_double(v); }},
      {"vat_power_iters", [&s](const std::string& v) { s.ssl.vat_power_iters = static_cast<int>(to_size(v)); }},
      {"ema_alpha", [&s](const std::string& v) { s.ssl.ema_alpha = to_double(v); }},
      {"uda_weight", [&s](const std::string& v) { s.uda.weight = to_double(v); }},
      {"grl_lambda", [&s](const std::string& v) { s.uda.grl.lambda_max = to_double(v); }},
      {"mcc_temperature", [&s](const std::string& v) { s.uda.mcc_temperature = to_double(v); }},
      {"analysis", [&s](const std::string& v) { s.analysis = to_bool(v); }},
      {"stump_thresholds", [&s](const std::string& v) { s.stump_thresholds = to_size(v); }},
  };
}

void check_train(const TrainSettings& s) {
  s.ssl.validate();
  s.uda.validate();
  if (!(s.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(s.momentum >= 0.0 && s.momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
  if (!(s.classifier_lr_multiplier > 0.0)) throw ConfigError("classifier_lr_multiplier must be > 0");
  if (!(s.uda_ramp_up >= 0.0)) throw ConfigError("uda_ramp_up must be >= 0");
  if (s.feature_dim == 0) throw ConfigError("feature_dim must be >= 1");
  for (auto h : s.hidden)
    if (h == 0) throw ConfigError("hidden sizes must be >= 1");
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  bool seeds_set = false;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto fail = [&](const std::string& msg) -> ConfigError {
      return ConfigError("config line " + std::to_string(line_no) + ": " + msg);
    };
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section == "task") cfg.tasks.emplace_back();
      else if (section != "methods" && section != "train" && section != "output")
        throw fail("unknown section [" + section + "] (valid: task, methods, train, output)");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw fail("missing key");
    if (section.empty()) throw fail("key '" + key + "' outside any section");
    try {
      if (section == "task") {
        auto keys = task_keys(cfg.tasks.back());
        auto it = keys.find(key);
        if (it == keys.end()) throw ConfigError("unknown key '" + key + "' in [task]");
        it->second(value);
      } else if (section == "methods") {
        if (key == "methods") {
          for (const auto& m : split_list(value)) {
            (void)MethodSpec::parse(m);
            cfg.methods.push_back(m);
          }
        } else if (key == "seeds") {
          if (!seeds_set) cfg.seeds.clear();
          seeds_set = true;
          for (const auto& s : split_list(value)) cfg.seeds.push_back(to_size(s));
        } else {
          throw ConfigError("unknown key '" + key + "' in [methods]");
        }
      } else if (section == "train") {
        auto keys = train_keys(cfg.train);
        auto it = keys.find(key);
        if (it == keys.end()) throw ConfigError("unknown key '" + key + "' in [train]");
        it->second(value);
        check_train(cfg.train);
      } else {
        if (key == "dir") cfg.output_dir = value;
        else if (key == "plots") cfg.plots = to_bool(value);
        else throw ConfigError("unknown key '" + key + "' in [output]");
      }
    } catch (const ConfigError& e) {
      throw fail(e.what());
    } catch (const Error& e) {
      throw fail(e.what());
    }
  }
  for (auto& t : cfg.tasks) {
    if (t.name.empty()) t.name = t.generator;
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  for (const auto& t : cfg.tasks) {
    os << "[task]\n"
       << "name = " << t.name << "\n"
       << "generator = " << t.generator << "\n"
       << "c = " << fmt(t.c) << "\n"
       << "d = " << fmt(t.d) << "\n"
       << "n_target = " << t.n_target << "\n"
       << "n_src = " << t.n_src << "\n"
       << "n_tgt = " << t.n_tgt << "\n"
       << "rotation = " << fmt(t.rotation) << "\n"
       << "translation = " << fmt(t.translation_x) << ", " << fmt(t.translation_y) << "\n"
       << "noise = " << fmt(t.noise) << "\n";
    if (!t.csv_path.empty()) os << "csv = " << t.csv_path << "\n";
    os << "num_classes = " << t.num_classes << "\n"
       << "weak_sigma = " << fmt(t.weak.weak_noise_sigma) << "\n"
       << "strong_sigma = " << fmt(t.strong.strong_noise_sigma) << "\n"
       << "dropout = " << fmt(t.strong.dropout_prob) << "\n"
       << "aug_rotation = " << fmt(t.strong.rotation_deg) << "\n";
    if (t.vat_epsilon) os << "vat_epsilon = " << fmt(*t.vat_epsilon) << "\n";
    os << "\n";
  }
  os << "[methods]\nmethods = " << join(cfg.methods) << "\nseeds = " << join(cfg.seeds) << "\n\n";
  const TrainSettings& s = cfg.train;
  os << "[train]\n"
     << "steps = " << s.steps << "\n"
     << "batch_labeled = " << s.batch_labeled << "\n"
     << "batch_unlabeled = " << s.batch_unlabeled << "\n"
     << "eval_every = " << s.eval_every << "\n"
     << "lr = " << fmt(s.lr) << "\n"
     << "momentum = " << fmt(s.momentum) << "\n"
     << "classifier_lr_multiplier = " << fmt(s.classifier_lr_multiplier) << "\n"
     << "weight_decay = " << fmt(s.weight_decay) << "\n"
     << "route = " << to_string(s.route) << "\n"
     << "uda_ramp_up = " << fmt(s.uda_ramp_up) << "\n"
     << "hidden = " << join(s.hidden) << "\n"
     << "feature_dim = " << s.feature_dim << "\n"
     << "ssl_weight = " << fmt(s.ssl.weight) << "\n"
     << "ramp_up = " << fmt(s.ssl.ramp_up_fraction) << "\n"
     << "tau = " << fmt(s.ssl.confidence_threshold) << "\n"
     << "sharpen_temperature = " << fmt(s.ssl.sharpen_temperature) << "\n"
     << "mixup_alpha = " << fmt(s.ssl.mixup_alpha) << "\n"
     << "mixmatch_augmentations = " << s.ssl.mixmatch_augmentations << "\n"
     << "vat_epsilon = " << fmt(s.ssl.vat_epsilon) << "\n"
     << "vat_xi = " << fmt(s.ssl.vat_xi) << "\n"
     << "vat_power_iters = " << s.ssl.vat_power_iters << "\n"
     << "ema_alpha = " << fmt(s.ssl.ema_alpha) << "\n"
     << "uda_weight = " << fmt(s.uda.weight) << "\n"
     << "grl_lambda = " << fmt(s.uda.grl.lambda_max) << "\n"
     << "mcc_temperature = " << fmt(s.uda.mcc_temperature) << "\n"
     << "analysis = " << (s.analysis ? "true" : "false") << "\n"
     << "stump_thresholds = " << s.stump_thresholds << "\n\n";
  os << "[output]\n";
  if (!cfg.output_dir.empty()) os << "dir = " << cfg.output_dir << "\n";
  os << "plots = " << (cfg.plots ? "true" : "false") << "\n";
  return os.str();
}

std::string config_reference() {
  ExperimentConfig defaults;
  TaskSpec t;
  t.name = "two_moons";
  defaults.tasks.push_back(t);
  defaults.methods.push_back("source_only");
  return "Config file reference (every key, shown with its default):\n\n" + serialize_config(defaults) +
         "\n[task] may repeat. generator is one of toy1d, two_moons, support_a..support_d, csv.\n"
         "toy1d uses c, d, n_target; two_moons uses n_src, n_tgt, rotation, translation, noise;\n"
         "support_* uses n_src, n_tgt; csv uses csv and num_classes. methods accepts hybrids\n"
         "such as mcc+uda_consistency and a route suffix such as entropy_min@full.\n";
}

// --- records -----------------------------------------------------------------------------

const std::vector<std::string>& metric_registry() {
  static const std::vector<std::string> names{
      "accuracy", "category_accuracy", "best_accuracy", "best_step", "curve_accuracy", "curve_sup_loss",
      "proxy_a_distance", "d_hdh", "lambda_h", "bound_gap", "run_failed"};
  return names;
}

namespace {

int seed_rank(const std::string& s, unsigned long long& num) {
  if (s == "mean") return 1;
  if (s == "std") return 2;
  num = std::strtoull(s.c_str(), nullptr, 10);
  return 0;
}

bool record_less(const ExperimentRecord& a, const ExperimentRecord& b) {
  if (a.task != b.task) return a.task < b.task;
  if (a.method != b.method) return a.method < b.method;
  unsigned long long na = 0, nb = 0;
  const int ra = seed_rank(a.seed, na), rb = seed_rank(b.seed, nb);
  if (ra != rb) return ra < rb;
  if (na != nb) return na < nb;
  if (a.split != b.split) return a.split < b.split;
  if (a.metric != b.metric) return a.metric < b.metric;
  if (a.step != b.step) return a.step < b.step;
  return a.value < b.value;
}

const char* kCsvComment = "# std rows are population standard deviations over seeds (divide by n)";
const char* kCsvHeader = "method,task,seed,split,metric,step,value";

}  // namespace

void sort_records(std::vector<ExperimentRecord>& records) { std::stable_sort(records.begin(), records.end(), record_less); }

std::string records_to_csv(const std::vector<ExperimentRecord>& records) {
  std::vector<ExperimentRecord> sorted = records;
  sort_records(sorted);
  std::string out = std::string(kCsvComment) + "\n" + kCsvHeader + "\n";
  char buf[64];
  for (const auto& r : sorted) {
    if (!std::isfinite(r.value)) throw DataError("record value for " + r.metric + " is not finite");
    std::snprintf(buf, sizeof buf, ",%zu,%.6g\n", r.step, r.value);
    out += r.method + "," + r.task + "," + r.seed + "," + r.split + "," + r.metric + buf;
  }
  return out;
}

void emit_csv(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path) {
  const std::string text = records_to_csv(records);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot write " + path.string() + ": " + ec.message());
}

std::vector<ExperimentRecord> parse_records_csv(const std::string& text) {
  std::vector<ExperimentRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kCsvHeader) throw DataError("records csv: bad header on line " + std::to_string(line_no));
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw DataError("records csv: line " + std::to_string(line_no) + " needs 7 fields");
    try {
      out.push_back({f[0], f[1], f[2], f[3], f[4], to_size(f[5]), to_double(f[6])});
    } catch (const ConfigError& e) {
      throw DataError("records csv: line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header) throw DataError("records csv: missing header");
  return out;
}

std::vector<ExperimentRecord> load_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_records_csv(ss.str());
}

std::vector<ExperimentRecord> aggregate(const std::vector<ExperimentRecord>& raw) {
  using Key = std::tuple<std::string, std::string, std::string, std::string, std::size_t>;
  std::map<Key, std::vector<double>> groups;
  for (const auto& r : raw) {
    if (r.seed == "mean" || r.seed == "std") continue;
    groups[{r.task, r.method, r.split, r.metric, r.step}].push_back(r.value);
  }
  std::vector<ExperimentRecord> out;
  for (const auto& [k, vals] : groups) {
    const double n = static_cast<double>(vals.size());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    const auto& [task, method, split, metric, step] = k;
    out.push_back({method, task, "mean", split, metric, step, mean});
    out.push_back({method, task, "std", split, metric, step, std::sqrt(var / n)});
  }
  return out;
}

std::vector<ExperimentRecord> analysis_records(const std::string& task, const std::string& method,
                                               std::uint64_t seed, const DomainDataset& dataset,
                                               const ModelBundle& model, std::size_t stump_thresholds) {
  std::vector<ExperimentRecord> out;
  const std::string sd = std::to_string(seed);
  const Tensor fs = extract_features(model, dataset.source().x);
  const Tensor ft = extract_features(model, dataset.target_unlabeled());
  if (fs.rows() >= 20 && ft.rows() >= 20) {
    out.push_back({method, task, sd, "transductive", "proxy_a_distance", 0, proxy_a_distance(fs, ft, seed)});
  }
  if (fs.rows() == 0 || ft.rows() == 0) return out;
  Tensor both(Shape{fs.rows() + ft.rows(), fs.cols()});
  std::copy(fs.values().begin(), fs.values().end(), both.values().begin());
  std::copy(ft.values().begin(), ft.values().end(), both.values().begin() + static_cast<std::ptrdiff_t>(fs.size()));
  const FiniteHypothesisClass h = stump_class(both, stump_thresholds);
  const LabeledSet s{fs, dataset.source().y};
  const LabeledSet t{ft, dataset.hidden_target_labels(LabelAccess::evaluation())};
  // Stumps only make sense for two classes.
  if (dataset.metadata().num_classes != 2) {
    out.push_back({method, task, sd, "transductive", "d_hdh", 0, hdh_divergence(h, fs, ft)});
    return out;
  }
  const auto reports = verify_bound(h, s, t);
  double gap = INFINITY;
  for (const auto& r : reports) gap = std::min(gap, r.rhs - r.target_risk);
  out.push_back({method, task, sd, "transductive", "d_hdh", 0, reports.front().divergence});
  out.push_back({method, task, sd, "transductive", "lambda_h", 0, reports.front().lambda});
  out.push_back({method, task, sd, "transductive", "bound_gap", 0, gap});
  return out;
}

std::vector<ExperimentRecord> run_records(const std::string& task, const std::string& method, std::uint64_t seed,
                                          const DomainDataset& dataset, const TrainResult& result,
                                          const TrainSettings& settings) {
  std::vector<ExperimentRecord> out;
  const std::string sd = std::to_string(seed);
  const std::size_t final_step = result.history.records.empty() ? 0 : result.history.records.back().step;
  for (Split split : {Split::transductive, Split::inductive}) {
    const std::string sp = to_string(split);
    const Metrics m = evaluate(result.model, dataset, split);
    out.push_back({method, task, sd, sp, "accuracy", final_step, m.accuracy});
    out.push_back({method, task, sd, sp, "category_accuracy", final_step, m.category_accuracy});
    double best = -1.0;
    std::size_t best_step = 0;
    for (const auto& r : result.history.records) {
      const double a = split == Split::transductive ? r.transductive_accuracy : r.inductive_accuracy;
      out.push_back({method, task, sd, sp, "curve_accuracy", r.step, a});
      if (a > best) {
        best = a;
        best_step = r.step;
      }
    }
    // Stored at the final step so seeds aggregate together; best_step says where it was reached.
    if (best >= 0.0) {
      out.push_back({method, task, sd, sp, "best_accuracy", final_step, best});
      out.push_back({method, task, sd, sp, "best_step", final_step, static_cast<double>(best_step)});
    }
  }
  for (const auto& r : result.history.records) {
    out.push_back({method, task, sd, "transductive", "curve_sup_loss", r.step, r.supervised_loss});
  }
  if (settings.analysis) {
    auto extra = analysis_records(task, method, seed, dataset, result.model, settings.stump_thresholds);
    for (auto& e : extra) {
      e.step = final_step;
      out.push_back(std::move(e));
    }
  }
  return out;
}

// --- matrix ---------------------------------------------------------------------------

namespace {

std::string file_safe(std::string s) {
  for (char& ch : s)
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '_' && ch != '-' && ch != '+' && ch != '@') ch = '_';
  return s;
}

}  // namespace

MatrixResult run_matrix(const ExperimentConfig& config, const RunOptions& options) {
  config.validate();
  struct Job {
    const TaskSpec* task;
    std::string method;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& t : config.tasks)
    for (const auto& m : config.methods)
      for (auto s : config.seeds) jobs.push_back({&t, m, s});

  std::filesystem::path run_dir;
  if (!options.output_dir.empty()) {
    run_dir = options.output_dir / "runs";
    std::error_code ec;
    std::filesystem::create_directories(run_dir, ec);
    if (ec) throw Error("cannot create output directory " + run_dir.string() + ": " + ec.message());
  }

  std::vector<std::vector<ExperimentRecord>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!options.log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    options.log(msg);
  };

  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const Job& job = jobs[i];
      const std::string label = job.task->name + "/" + job.method + "/" + std::to_string(job.seed);
      try {
        const DomainDataset ds = job.task->make(job.seed);
        const TrainResult r = train(ds, config.train_config(job.method, *job.task, job.seed));
        results[i] = run_records(job.task->name, job.method, job.seed, ds, r, config.train);
        log("done " + label);
      } catch (const std::exception& e) {
        errors[i] = e.what();
        results[i] = {{job.method, job.task->name, std::to_string(job.seed), "transductive", "run_failed", 0, 1.0}};
        log("FAILED " + label + ": " + e.what());
      }
      if (!run_dir.empty()) {
        try {
          emit_csv(results[i], run_dir / (file_safe(job.task->name) + "__" + file_safe(job.method) + "__" +
                                          std::to_string(job.seed) + ".csv"));
        } catch (const std::exception& e) {
          log(std::string("could not write run file: ") + e.what());
        }
      }
    }
  };

  const std::size_t n_threads = std::max<std::size_t>(1, std::min(options.jobs, jobs.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  MatrixResult out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    out.records.insert(out.records.end(), results[i].begin(), results[i].end());
    if (!errors[i].empty()) {
      out.failures.push_back(jobs[i].task->name + "/" + jobs[i].method + "/" + std::to_string(jobs[i].seed) + ": " +
                             errors[i]);
    }
  }
  auto agg = aggregate(out.records);
  out.records.insert(out.records.end(), agg.begin(), agg.end());
  sort_records(out.records);
  return out;
}

std::string render_table_text(const std::vector<ExperimentRecord>& records, const std::string& metric,
                              const std::string& split) {
  std::vector<std::string> tasks, methods;
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> cells;
  for (const auto& r : records) {
    if (r.metric != metric || r.split != split || (r.seed != "mean" && r.seed != "std")) continue;
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    auto& cell = cells[{r.method, r.task}];
    (r.seed == "mean" ? cell.first : cell.second) = r.value;
  }
  std::vector<std::vector<std::string>> rows;
  rows.push_back({metric + " (" + split + ")"});
  for (const auto& t : tasks) rows[0].push_back(t);
  char buf[64];
  for (const auto& m : methods) {
    std::vector<std::string> row{m};
    for (const auto& t : tasks) {
      auto it = cells.find({m, t});
      if (it == cells.end()) {
        row.push_back("-");
      } else {
        std::snprintf(buf, sizeof buf, "%.4f +- %.4f", it->second.first, it->second.second);
        row.push_back(buf);
      }
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(rows[0].size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::string out;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      out += rows[r][c];
      if (c + 1 < rows[r].size()) out += std::string(width[c] - rows[r][c].size() + 2, ' ');
    }
    out += "\n";
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      out += std::string(total - 2, '-') + "\n";
    }
  }
  return out;
}

}  // namespace shiftbench
