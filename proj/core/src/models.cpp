#include "shiftbench/models.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "shiftbench/error.hpp"
#include "shiftbench/random.hpp"

namespace shiftbench {

const char* to_string(Route route) {
  return route == Route::full_model ? "full_model" : "feature_extractor_only";
}

Route parse_route(const std::string& text) {
  if (text == "full_model" || text == "full") return Route::full_model;
  if (text == "feature_extractor_only" || text == "g") return Route::feature_extractor_only;
  throw ConfigError("unknown route '" + text + "' (expected full_model or feature_extractor_only)");
}

void ModelConfig::validate() const {
  if (input_dim == 0 || feature_dim == 0 || discriminator_hidden == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  for (std::size_t h : hidden_dims) {
    if (h == 0) throw ConfigError("hidden layer widths must be positive");
  }
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
}

std::size_t ModelConfig::discriminator_input_dim() const {
  switch (discriminator) {
    case DiscriminatorInput::none: return 0;
    case DiscriminatorInput::features: return feature_dim;
    case DiscriminatorInput::conditioned: return feature_dim * num_classes;
  }
  return 0;
}

void ModelBundle::sync_teacher() {
  teacher.emplace(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(student_param_count()));
}

namespace {

void push_linear(ModelBundle& b, Rng& rng, std::size_t fan_in, std::size_t fan_out, const std::string& prefix,
                 ParamGroup group) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor w(Shape{fan_in, fan_out});
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  b.params.push_back(std::move(w));
  b.names.push_back(prefix + ".weight");
  b.groups.push_back(group);
  b.params.emplace_back(Shape{fan_out}, 0.0);
  b.names.push_back(prefix + ".bias");
  b.groups.push_back(group);
}

}  // namespace

ModelBundle init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelBundle b;
  b.config = config;
  Rng rng(seed);
  std::size_t in = config.input_dim;
  std::size_t layer = 0;
  for (std::size_t width : config.hidden_dims) {
    push_linear(b, rng, in, width, "g." + std::to_string(layer++), ParamGroup::feature_extractor);
    in = width;
  }
  push_linear(b, rng, in, config.feature_dim, "g." + std::to_string(layer), ParamGroup::feature_extractor);
  push_linear(b, rng, config.feature_dim, config.num_classes, "h", ParamGroup::classifier);
  if (config.discriminator != DiscriminatorInput::none) {
    push_linear(b, rng, config.discriminator_input_dim(), config.discriminator_hidden, "d.0",
                ParamGroup::discriminator);
    push_linear(b, rng, config.discriminator_hidden, 1, "d.1", ParamGroup::discriminator);
  }
  if (config.with_teacher) b.sync_teacher();
  return b;
}

double GrlSchedule::at(double progress) const {
  return lambda_max * (2.0 / (1.0 + std::exp(-10.0 * progress)) - 1.0);
}

ModelGraph::ModelGraph(ad::Tape& tape, const ModelBundle& bundle, Route regularizer_route, bool trainable)
    : tape_(&tape), bundle_(&bundle), route_(regularizer_route) {
  leaves_.reserve(bundle.params.size());
  for (const Tensor& p : bundle.params) leaves_.push_back(trainable ? tape.variable(p) : tape.constant(p));
  if (route_ == Route::feature_extractor_only && trainable) {
    frozen_head_.push_back(tape.constant(bundle.params[bundle.h_weight_index()]));
    frozen_head_.push_back(tape.constant(bundle.params[bundle.h_bias_index()]));
  } else {
    frozen_head_.push_back(leaves_[bundle.h_weight_index()]);
    frozen_head_.push_back(leaves_[bundle.h_bias_index()]);
  }
}

ad::Var ModelGraph::input(const Tensor& x) const {
  if (x.rank() != 2 || x.cols() != bundle_->config.input_dim) {
    throw ShapeError("model input: expected (B, " + std::to_string(bundle_->config.input_dim) + "), got " +
                     shape_string(x.shape()));
  }
  return tape_->constant(x);
}

ad::Var ModelGraph::mlp(ad::Var x, std::size_t first, std::size_t layers, const std::vector<ad::Var>& leaves,
                        bool relu_last) const {
  ad::Var h = x;
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::add(ad::matmul(h, leaves[first + 2 * l]), leaves[first + 2 * l + 1]);
    if (l + 1 < layers || relu_last) h = ad::relu(h);
  }
  return h;
}

ad::Var ModelGraph::features(ad::Var x) const { return mlp(x, 0, bundle_->g_layer_count(), leaves_, false); }

ad::Var ModelGraph::classify(ad::Var z) const {
  return ad::add(ad::matmul(z, leaves_[bundle_->h_weight_index()]), leaves_[bundle_->h_bias_index()]);
}

ad::Var ModelGraph::classify_reg(ad::Var z) const {
  return ad::add(ad::matmul(z, frozen_head_[0]), frozen_head_[1]);
}

ad::Var ModelGraph::teacher_logits(const Tensor& x) const {
  if (!bundle_->teacher) throw Error("teacher requested but the model has no EMA teacher");
  if (teacher_leaves_.empty()) {
    for (const Tensor& p : *bundle_->teacher) teacher_leaves_.push_back(tape_->constant(p));
  }
  ad::Var z = mlp(input(x), 0, bundle_->g_layer_count(), teacher_leaves_, false);
  return ad::add(ad::matmul(z, teacher_leaves_[bundle_->h_weight_index()]),
                 teacher_leaves_[bundle_->h_bias_index()]);
}

ad::Var ModelGraph::discriminate(ad::Var z, std::optional<ad::Var> conditioning, double lambda) const {
  if (!bundle_->has_discriminator()) throw Error("discriminate: model has no domain discriminator");
  ad::Var in = z;
  if (conditioning) {
    if (conditioning->value().cols() != bundle_->config.num_classes) {
      throw ShapeError("discriminate: conditioning must have " + std::to_string(bundle_->config.num_classes) +
                       " columns, got " + shape_string(conditioning->shape()));
    }
    in = ad::outer_rows(z, *conditioning);
  }
  if (in.value().cols() != bundle_->config.discriminator_input_dim()) {
    throw ShapeError("discriminate: discriminator expects " +
                     std::to_string(bundle_->config.discriminator_input_dim()) + " inputs, got " +
                     shape_string(in.shape()));
  }
  ad::Var reversed = ad::grad_reverse(in, lambda);
  ad::Var hidden = mlp(reversed, bundle_->student_param_count(), 1, leaves_, true);
  ad::Var logit = mlp(hidden, bundle_->student_param_count() + 2, 1, leaves_, false);
  return ad::sigmoid(logit);
}

std::vector<Tensor> ModelGraph::gradients() const {
  std::vector<Tensor> grads;
  grads.reserve(leaves_.size());
  for (const ad::Var& v : leaves_) grads.push_back(v.grad());
  return grads;
}

Tensor predict(const ModelBundle& bundle, const Tensor& x, bool use_teacher) {
  ad::Tape tape;
  ModelGraph graph(tape, bundle, Route::full_model, false);
  ad::Var logits = use_teacher ? graph.teacher_logits(x) : graph.logits(x);
  return ad::softmax_values(logits.value());
}

Tensor extract_features(const ModelBundle& bundle, const Tensor& x) {
  ad::Tape tape;
  ModelGraph graph(tape, bundle, Route::full_model, false);
  return graph.features(graph.input(x)).value();
}

void ema_update(ModelBundle& bundle, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ema_update: alpha must be in [0, 1]");
  if (!bundle.teacher) throw Error("ema_update: model has no EMA teacher");
  auto& teacher = *bundle.teacher;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    Tensor& t = teacher[i];
    const Tensor& s = bundle.params[i];
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = alpha * t[j] + (1.0 - alpha) * s[j];
  }
}

// --- checkpoints -------------------------------------------------------------

namespace {

const char* disc_name(DiscriminatorInput d) {
  switch (d) {
    case DiscriminatorInput::none: return "none";
    case DiscriminatorInput::features: return "features";
    case DiscriminatorInput::conditioned: return "conditioned";
  }
  return "none";
}

DiscriminatorInput parse_disc(const std::string& s) {
  if (s == "none") return DiscriminatorInput::none;
  if (s == "features") return DiscriminatorInput::features;
  if (s == "conditioned") return DiscriminatorInput::conditioned;
  throw DataError("checkpoint: unknown discriminator kind '" + s + "'");
}

void write_tensor(std::ostringstream& out, const char* kind, const std::string& name, const Tensor& t) {
  out << kind << ' ' << name << ' ' << t.rank();
  for (std::size_t e : t.shape()) out << ' ' << e;
  out << '\n';
  char buf[64];
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%a", t[i]);
    out << (i ? " " : "") << buf;
  }
  out << '\n';
}

Tensor read_tensor(std::istringstream& header, std::istream& in, const std::string& name) {
  std::size_t rank = 0;
  header >> rank;
  Shape shape(rank);
  for (auto& e : shape) header >> e;
  if (!header) throw DataError("checkpoint: bad shape for '" + name + "'");
  std::string line;
  std::getline(in, line);
  std::istringstream values(line);
  std::vector<double> v;
  std::string tok;
  while (values >> tok) v.push_back(std::strtod(tok.c_str(), nullptr));
  if (v.size() != shape_size(shape)) throw DataError("checkpoint: value count mismatch for '" + name + "'");
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

std::string serialize_checkpoint(const ModelBundle& bundle) {
  std::ostringstream out;
  const ModelConfig& c = bundle.config;
  out << "shiftbench-checkpoint 1\n";
  out << "config input_dim " << c.input_dim << " hidden";
  out << ' ' << c.hidden_dims.size();
  for (std::size_t h : c.hidden_dims) out << ' ' << h;
  out << " feature_dim " << c.feature_dim << " num_classes " << c.num_classes << " discriminator_hidden "
      << c.discriminator_hidden << " discriminator " << disc_name(c.discriminator) << " teacher "
      << (bundle.teacher ? 1 : 0) << '\n';
  for (std::size_t i = 0; i < bundle.params.size(); ++i) write_tensor(out, "param", bundle.names[i], bundle.params[i]);
  if (bundle.teacher) {
    for (std::size_t i = 0; i < bundle.teacher->size(); ++i) {
      write_tensor(out, "teacher", bundle.names[i], (*bundle.teacher)[i]);
    }
  }
  return out.str();
}

ModelBundle parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "shiftbench-checkpoint 1") throw DataError("checkpoint: bad header");
  if (!std::getline(in, line)) throw DataError("checkpoint: missing config line");
  ModelConfig c;
  bool has_teacher = false;
  {
    std::istringstream cfg(line);
    std::string key;
    cfg >> key;
    if (key != "config") throw DataError("checkpoint: expected config line");
    while (cfg >> key) {
      if (key == "input_dim") cfg >> c.input_dim;
      else if (key == "hidden") {
        std::size_t n = 0;
        cfg >> n;
        c.hidden_dims.assign(n, 0);
        for (auto& h : c.hidden_dims) cfg >> h;
      } else if (key == "feature_dim") cfg >> c.feature_dim;
      else if (key == "num_classes") cfg >> c.num_classes;
      else if (key == "discriminator_hidden") cfg >> c.discriminator_hidden;
      else if (key == "discriminator") {
        std::string d;
        cfg >> d;
        c.discriminator = parse_disc(d);
      } else if (key == "teacher") {
        int t = 0;
        cfg >> t;
        has_teacher = t != 0;
      } else {
        throw DataError("checkpoint: unknown config key '" + key + "'");
      }
    }
  }
  c.with_teacher = has_teacher;
  // Shapes, names and groups come from a fresh init; values are overwritten.
  ModelBundle b = init_model(c, 0);
  std::size_t next_param = 0, next_teacher = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream header(line);
    std::string kind, name;
    header >> kind >> name;
    Tensor t = read_tensor(header, in, name);
    if (kind == "param") {
      if (next_param >= b.params.size() || b.names[next_param] != name || b.params[next_param].shape() != t.shape()) {
        throw DataError("checkpoint: unexpected parameter '" + name + "'");
      }
      b.params[next_param++] = std::move(t);
    } else if (kind == "teacher") {
      if (!b.teacher || next_teacher >= b.teacher->size() || (*b.teacher)[next_teacher].shape() != t.shape()) {
        throw DataError("checkpoint: unexpected teacher tensor '" + name + "'");
      }
      (*b.teacher)[next_teacher++] = std::move(t);
    } else {
      throw DataError("checkpoint: unknown record kind '" + kind + "'");
    }
  }
  if (next_param != b.params.size() || (b.teacher && next_teacher != b.teacher->size())) {
    throw DataError("checkpoint: truncated file");
  }
  return b;
}

void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << serialize_checkpoint(bundle);
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace shiftbench
