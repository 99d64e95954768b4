#include "shiftbench/domains.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "shiftbench/error.hpp"

namespace shiftbench {

const char* to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::none: return "none";
    case ScenarioKind::toy1d: return "toy1d";
    case ScenarioKind::two_moons: return "two_moons";
    case ScenarioKind::support_a: return "support_a";
    case ScenarioKind::support_b: return "support_b";
    case ScenarioKind::support_c: return "support_c";
    case ScenarioKind::support_d: return "support_d";
    case ScenarioKind::csv: return "csv";
  }
  return "none";
}

DomainDataset::DomainDataset(DatasetMetadata meta, LabeledSet source, Tensor target_unlabeled,
                             std::vector<int> hidden_labels, LabeledSet target_test)
    : meta_(std::move(meta)),
      source_(std::move(source)),
      target_unlabeled_(std::move(target_unlabeled)),
      hidden_labels_(std::move(hidden_labels)),
      target_test_(std::move(target_test)) {
  if (hidden_labels_.size() != target_unlabeled_.rows()) {
    throw DataError("hidden target labels (" + std::to_string(hidden_labels_.size()) +
                    ") must match target-train rows (" + std::to_string(target_unlabeled_.rows()) + ")");
  }
  if (source_.x.rows() != source_.y.size() || target_test_.x.rows() != target_test_.y.size()) {
    throw DataError("labeled set row/label count mismatch");
  }
  auto check_labels = [&](const std::vector<int>& ys, const char* where) {
    for (int y : ys) {
      if (y < 0 || static_cast<std::size_t>(y) >= meta_.num_classes) {
        throw DataError(std::string(where) + " label " + std::to_string(y) + " outside [0, " +
                        std::to_string(meta_.num_classes) + ")");
      }
    }
  };
  check_labels(source_.y, "source");
  check_labels(hidden_labels_, "target-train");
  check_labels(target_test_.y, "target-test");
}

bool DomainDataset::same_data(const DomainDataset& other) const {
  return meta_.num_classes == other.meta_.num_classes && source_ == other.source_ && target_unlabeled_ == other.target_unlabeled_ &&
         hidden_labels_ == other.hidden_labels_ && target_test_ == other.target_test_;
}

namespace {

LabeledSet make_set(std::size_t dim, const std::vector<std::vector<double>>& rows, std::vector<int> labels) {
  std::vector<double> flat;
  flat.reserve(rows.size() * dim);
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return LabeledSet{Tensor(Shape{rows.size(), dim}, std::move(flat)), std::move(labels)};
}

// Splits draws into (train, test) with the first round(0.8 n) rows as train.
std::pair<LabeledSet, LabeledSet> split_80_20(std::size_t dim, const std::vector<std::vector<double>>& rows,
                                              const std::vector<int>& labels) {
  const std::size_t n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(rows.size())));
  std::vector<std::vector<double>> a(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::vector<double>> b(rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  std::vector<int> la(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<int> lb(labels.begin() + static_cast<std::ptrdiff_t>(n_train), labels.end());
  return {make_set(dim, a, std::move(la)), make_set(dim, b, std::move(lb))};
}

}  // namespace

// --- toy1d ---------------------------------------------------------------------

int toy1d_label(double x) { return x <= 0.5 ? 0 : 1; }

DomainDataset gen_toy1d(double c, double d, std::size_t n_target, std::uint64_t seed) {
  if (!(c >= 0.0 && c <= 0.5)) throw ConfigError("gen_toy1d: c must satisfy 0 <= c <= 0.5");
  if (!(d > 0.5 && d <= 1.0)) throw ConfigError("gen_toy1d: d must satisfy 0.5 < d <= 1");
  if (n_target == 0) throw ConfigError("gen_toy1d: n_target must be positive");
  Rng rng(seed);
  LabeledSet source{Tensor::matrix(2, 1, {c, d}), {0, 1}};
  auto draw = [&](std::size_t n) {
    LabeledSet s{Tensor(Shape{n, 1}), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      s.x[i] = rng.uniform();
      s.y[i] = toy1d_label(s.x[i]);
    }
    return s;
  };
  LabeledSet train = draw(n_target);
  LabeledSet test = draw(std::max<std::size_t>(1, n_target / 4));
  DomainDataset ds({"toy1d", 2, 1, ScenarioKind::toy1d}, std::move(source), std::move(train.x), std::move(train.y),
                   std::move(test));
  DensityOracle oracle;
  oracle.source = [c, d](std::span<const double> x) { return (x[0] == c || x[0] == d) ? 0.5 : 0.0; };
  oracle.target = [](std::span<const double> x) { return (x[0] >= 0.0 && x[0] <= 1.0) ? 1.0 : 0.0; };
  oracle.source_absolutely_continuous = false;
  ds.set_density_oracle(std::move(oracle));
  ds.set_labeling([](std::span<const double> x) { return toy1d_label(x[0]); });
  return ds;
}

// --- two moons -------------------------------------------------------------------

namespace {

constexpr double kMoonCx = 0.5;
constexpr double kMoonCy = 0.25;

// Distance from p to the arc {center + (cos t, sin t) : t in [lo, lo + pi]}.
double arc_distance(double px, double py, double cx, double cy, double lo) {
  const double qx = px - cx, qy = py - cy;
  double theta = std::atan2(qy, qx);
  // Angle relative to the arc start, in [0, 2pi).
  double rel = theta - lo;
  while (rel < 0.0) rel += 2.0 * std::numbers::pi;
  while (rel >= 2.0 * std::numbers::pi) rel -= 2.0 * std::numbers::pi;
  if (rel <= std::numbers::pi) return std::abs(std::hypot(qx, qy) - 1.0);
  const double e0x = cx + std::cos(lo), e0y = cy + std::sin(lo);
  const double e1x = cx + std::cos(lo + std::numbers::pi), e1y = cy + std::sin(lo + std::numbers::pi);
  return std::min(std::hypot(px - e0x, py - e0y), std::hypot(px - e1x, py - e1y));
}

// Nearer noiseless moon in the canonical (source) frame.
int moon_label(double x, double y) {
  const double px = x + kMoonCx, py = y + kMoonCy;
  const double d0 = arc_distance(px, py, 0.0, 0.0, 0.0);
  const double d1 = arc_distance(px, py, 1.0, 0.5, std::numbers::pi);
  return d1 < d0 ? 1 : 0;
}

struct MoonTransform {
  double cos_r, sin_r, tx, ty;
  std::array<double, 2> forward(double x, double y) const {
    return {cos_r * x - sin_r * y + tx, sin_r * x + cos_r * y + ty};
  }
  std::array<double, 2> inverse(double x, double y) const {
    const double ux = x - tx, uy = y - ty;
    return {cos_r * ux + sin_r * uy, -sin_r * ux + cos_r * uy};
  }
};

void draw_moons(std::size_t n, double sigma, Rng& rng, const MoonTransform& tf,
                std::vector<std::vector<double>>& rows, std::vector<int>& labels) {
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % 2);
    const double t = rng.uniform(0.0, std::numbers::pi);
    double x = cls == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = cls == 0 ? std::sin(t) : 0.5 - std::sin(t);
    x += rng.normal(0.0, sigma) - kMoonCx;
    y += rng.normal(0.0, sigma) - kMoonCy;
    const int label = moon_label(x, y);
    const auto p = tf.forward(x, y);
    rows.push_back({p[0], p[1]});
    labels.push_back(label);
  }
}

}  // namespace

DomainDataset gen_two_moons_shift(const TwoMoonsParams& params, std::uint64_t seed) {
  if (params.n_src == 0 || params.n_tgt == 0) throw ConfigError("two_moons: sample counts must be positive");
  if (params.noise_sigma < 0.0) throw ConfigError("two_moons: noise_sigma must be non-negative");
  const double r = params.rotation_deg * std::numbers::pi / 180.0;
  const MoonTransform identity{1.0, 0.0, 0.0, 0.0};
  const MoonTransform shift{std::cos(r), std::sin(r), params.translation[0], params.translation[1]};

  Rng src_rng(mix_seed(seed, 1));
  Rng tgt_rng(mix_seed(seed, 2));
  std::vector<std::vector<double>> src_rows, tgt_rows;
  std::vector<int> src_labels, tgt_labels;
  draw_moons(params.n_src, params.noise_sigma, src_rng, identity, src_rows, src_labels);
  draw_moons(params.n_tgt, params.noise_sigma, tgt_rng, shift, tgt_rows, tgt_labels);

  auto [train, test] = split_80_20(2, tgt_rows, tgt_labels);
  DomainDataset ds({"two_moons", 2, 2, ScenarioKind::two_moons}, make_set(2, src_rows, src_labels),
                   std::move(train.x), std::move(train.y), std::move(test));
  ds.set_labeling([shift](std::span<const double> x) {
    const auto p = shift.inverse(x[0], x[1]);
    return moon_label(p[0], p[1]);
  });
  return ds;
}

// --- support scenarios -----------------------------------------------------------

SupportLayout support_layout(char kind) {
  switch (kind) {
    case 'a': return {{-2.0, 2.0, -2.0, 2.0}, {-1.0, 1.0, -1.0, 1.0}};
    case 'b': return {{-0.5, 0.5, -0.5, 0.5}, {-2.0, 2.0, -2.0, 2.0}};
    case 'c': return {{-3.0, -1.0, -1.5, 1.5}, {1.0, 3.0, -1.5, 1.5}};
    case 'd': return {{-2.0, 1.0, -1.5, 1.5}, {-1.0, 2.0, -1.5, 1.5}};
    default: throw ConfigError(std::string("support scenario kind must be one of a, b, c, d; got '") + kind + "'");
  }
}

int support_label(std::span<const double> x) { return x[1] > 0.25 * x[0] ? 1 : 0; }

DomainDataset gen_support_scenario(char kind, std::size_t n_src, std::size_t n_tgt, std::uint64_t seed) {
  const SupportLayout layout = support_layout(kind);
  if (n_src == 0 || n_tgt == 0) throw ConfigError("support scenario: sample counts must be positive");
  Rng rng(seed);
  auto draw = [&](const Rect& rect, std::size_t n, std::vector<std::vector<double>>& rows, std::vector<int>& labels) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p{rng.uniform(rect.x0, rect.x1), rng.uniform(rect.y0, rect.y1)};
      labels.push_back(support_label(p));
      rows.push_back(std::move(p));
    }
  };
  std::vector<std::vector<double>> src_rows, tgt_rows;
  std::vector<int> src_labels, tgt_labels;
  draw(layout.source, n_src, src_rows, src_labels);
  draw(layout.target, n_tgt, tgt_rows, tgt_labels);
  auto [train, test] = split_80_20(2, tgt_rows, tgt_labels);

  const ScenarioKind sk = kind == 'a'   ? ScenarioKind::support_a
                          : kind == 'b' ? ScenarioKind::support_b
                          : kind == 'c' ? ScenarioKind::support_c
                                        : ScenarioKind::support_d;
  DomainDataset ds({std::string("support_") + kind, 2, 2, sk}, make_set(2, src_rows, src_labels), std::move(train.x),
                   std::move(train.y), std::move(test));
  DensityOracle oracle;
  oracle.source = [r = layout.source](std::span<const double> x) { return r.contains(x) ? 1.0 / r.area() : 0.0; };
  oracle.target = [r = layout.target](std::span<const double> x) { return r.contains(x) ? 1.0 / r.area() : 0.0; };
  ds.set_density_oracle(std::move(oracle));
  ds.set_labeling(support_label);
  return ds;
}

// --- augmentation ----------------------------------------------------------------

void AugmentationSpec::validate() const {
  if (weak_noise_sigma < 0.0 || strong_noise_sigma < 0.0) throw ConfigError("augmentation sigmas must be >= 0");
  if (!(dropout_prob >= 0.0 && dropout_prob <= 1.0)) throw ConfigError("dropout probability must be in [0, 1]");
}

std::vector<double> augment(std::span<const double> x, const AugmentationSpec& spec, Rng& rng) {
  std::vector<double> out(x.begin(), x.end());
  switch (spec.kind) {
    case AugmentKind::identity: return out;
    case AugmentKind::weak:
      if (spec.weak_noise_sigma > 0.0) {
        for (double& v : out) v += rng.normal(0.0, spec.weak_noise_sigma);
      }
      return out;
    case AugmentKind::strong: {
      for (double& v : out) v += rng.normal(0.0, spec.strong_noise_sigma);
      for (double& v : out) {
        if (rng.uniform() < spec.dropout_prob) v = 0.0;
      }
      if (out.size() == 2 && spec.rotation_deg > 0.0) {
        const double a = rng.uniform(-spec.rotation_deg, spec.rotation_deg) * std::numbers::pi / 180.0;
        const double c = std::cos(a), s = std::sin(a);
        const double x0 = out[0], x1 = out[1];
        out[0] = c * x0 - s * x1;
        out[1] = s * x0 + c * x1;
      }
      return out;
    }
  }
  return out;
}

std::vector<double> augment(std::span<const double> x, const AugmentationSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return augment(x, spec, rng);
}

Tensor augment_batch(const Tensor& x, const AugmentationSpec& spec, Rng& rng) {
  if (spec.kind == AugmentKind::identity) return x;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto row = augment(x.row(r), spec, rng);
    std::copy(row.begin(), row.end(), out.row(r).begin());
  }
  return out;
}

// --- importance weighting --------------------------------------------------------

double importance_weight(std::span<const double> x, const DensityOracle& oracle) {
  if (!oracle.source_absolutely_continuous) {
    throw DataError("density ratio undefined: source distribution has no density (point masses)");
  }
  const double ps = oracle.source(x);
  if (!(ps > 0.0)) throw DataError("support violation: p_s(x) = 0 at the queried sample");
  return oracle.target(x) / ps;
}

// --- CSV ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& tok, std::size_t line_no) {
  const std::string t = trim(tok);
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v)) {
    throw DataError("csv line " + std::to_string(line_no) + ": bad number '" + tok + "'");
  }
  return v;
}

int parse_label(const std::string& tok, std::size_t line_no, std::size_t k) {
  const std::string t = trim(tok);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw DataError("csv line " + std::to_string(line_no) + ": bad label '" + tok + "'");
  }
  if (v < 0 || static_cast<std::size_t>(v) >= k) {
    throw DataError("csv line " + std::to_string(line_no) + ": label " + std::to_string(v) + " outside [0, " +
                    std::to_string(k) + ")");
  }
  return v;
}

}  // namespace

DomainDataset parse_csv(const std::string& text, const CsvSchema& schema) {
  if (schema.num_classes < 2) throw ConfigError("csv schema: num_classes must be at least 2");
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line[0] == '#') continue;
    header = split_commas(line);
    break;
  }
  if (header.size() < 4) throw DataError("csv: header must be f0,...,fD,label,domain,split");
  const std::size_t dim = header.size() - 3;
  for (std::size_t i = 0; i < dim; ++i) {
    if (trim(header[i]) != "f" + std::to_string(i)) {
      throw DataError("csv line " + std::to_string(line_no) + ": expected column f" + std::to_string(i) + ", got '" +
                      header[i] + "'");
    }
  }
  if (trim(header[dim]) != "label" || trim(header[dim + 1]) != "domain" || trim(header[dim + 2]) != "split") {
    throw DataError("csv line " + std::to_string(line_no) + ": last columns must be label,domain,split");
  }

  std::vector<double> src_x, tr_x, te_x;
  std::vector<int> src_y, tr_y, te_y;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || line[0] == '#') continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw DataError("csv line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " columns, got " + std::to_string(cells.size()));
    }
    std::vector<double> feats(dim);
    for (std::size_t i = 0; i < dim; ++i) feats[i] = parse_double(cells[i], line_no);
    const int y = parse_label(cells[dim], line_no, schema.num_classes);
    const std::string domain = trim(cells[dim + 1]);
    const std::string split = trim(cells[dim + 2]);
    if (split != "train" && split != "test") {
      throw DataError("csv line " + std::to_string(line_no) + ": unknown split '" + split + "' (expected train|test)");
    }
    if (domain == "src") {
      if (split != "train") throw DataError("csv line " + std::to_string(line_no) + ": source rows must be split=train");
      src_x.insert(src_x.end(), feats.begin(), feats.end());
      src_y.push_back(y);
    } else if (domain == "tgt") {
      auto& xs = split == "train" ? tr_x : te_x;
      auto& ys = split == "train" ? tr_y : te_y;
      xs.insert(xs.end(), feats.begin(), feats.end());
      ys.push_back(y);
    } else {
      throw DataError("csv line " + std::to_string(line_no) + ": unknown domain '" + domain + "' (expected src|tgt)");
    }
  }
  const std::size_t ns = src_y.size(), nt = tr_y.size(), ne = te_y.size();
  return DomainDataset({schema.task, schema.num_classes, dim, ScenarioKind::csv},
                       LabeledSet{Tensor(Shape{ns, dim}, std::move(src_x)), std::move(src_y)},
                       Tensor(Shape{nt, dim}, std::move(tr_x)), std::move(tr_y),
                       LabeledSet{Tensor(Shape{ne, dim}, std::move(te_x)), std::move(te_y)});
}

DomainDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open csv " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

std::string export_csv(const DomainDataset& dataset) {
  const std::size_t dim = dataset.metadata().input_dim;
  std::string out;
  for (std::size_t i = 0; i < dim; ++i) out += "f" + std::to_string(i) + ",";
  out += "label,domain,split\n";
  char buf[40];
  auto emit = [&](const Tensor& x, const std::vector<int>& y, const char* domain, const char* split) {
    for (std::size_t r = 0; r < y.size(); ++r) {
      for (std::size_t c = 0; c < dim; ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", x.at(r, c));
        out += buf;
        out += ',';
      }
      out += std::to_string(y[r]) + "," + domain + "," + split + "\n";
    }
  };
  emit(dataset.source().x, dataset.source().y, "src", "train");
  emit(dataset.target_unlabeled(), dataset.hidden_target_labels(LabelAccess::evaluation()), "tgt", "train");
  emit(dataset.target_test().x, dataset.target_test().y, "tgt", "test");
  return out;
}

void save_csv(const DomainDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write csv " + path.string());
  out << export_csv(dataset);
}

}  // namespace shiftbench
