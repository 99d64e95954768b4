#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "shiftbench/autodiff.hpp"
#include "shiftbench/tensor.hpp"

namespace shiftbench {

// Where regularizer gradients are allowed to land.
enum class Route {
  full_model,
  // Regularizers still evaluate h, but h's parameters accumulate no gradient
  // from them; only the supervised term trains h.
  feature_extractor_only,
};

const char* to_string(Route route);
Route parse_route(const std::string& text);

enum class DiscriminatorInput {
  none,
  features,     // DANN: z
  conditioned,  // CDAN: flatten(z outer p)
};

struct ModelConfig {
  std::size_t input_dim = 2;
  std::vector<std::size_t> hidden_dims{64, 64};
  std::size_t feature_dim = 16;
  std::size_t num_classes = 2;
  std::size_t discriminator_hidden = 32;
  DiscriminatorInput discriminator = DiscriminatorInput::none;
  bool with_teacher = false;

  void validate() const;
  std::size_t discriminator_input_dim() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class ParamGroup { feature_extractor, classifier, discriminator };

// f = h o g plus the optional discriminator and EMA teacher.
//
// `params` holds every trainable tensor in a fixed order: g's layers
// (weight, bias) first, then h (weight, bias), then the discriminator's
// layers. Weights are (fan_in, fan_out) and applied as x W + b. g applies
// relu after each hidden layer; its last layer (into feature_dim) is linear.
// The teacher, when present, mirrors the g and h entries of `params`.
struct ModelBundle {
  ModelConfig config;
  std::vector<Tensor> params;
  std::vector<std::string> names;
  std::vector<ParamGroup> groups;
  std::optional<std::vector<Tensor>> teacher;

  std::size_t g_layer_count() const { return config.hidden_dims.size() + 1; }
  std::size_t h_weight_index() const { return 2 * g_layer_count(); }
  std::size_t h_bias_index() const { return h_weight_index() + 1; }
  std::size_t student_param_count() const { return h_bias_index() + 1; }
  bool has_discriminator() const { return params.size() > student_param_count(); }
  bool has_teacher() const { return teacher.has_value(); }

  void sync_teacher();
  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

ModelBundle init_model(const ModelConfig& config, std::uint64_t seed);

// Class probabilities (B, K) for x (B, input_dim). Throws if the teacher is
// requested but absent.
Tensor predict(const ModelBundle& bundle, const Tensor& x, bool use_teacher = false);
// g(x) as a plain tensor (B, feature_dim).
Tensor extract_features(const ModelBundle& bundle, const Tensor& x);

// teacher <- alpha * teacher + (1 - alpha) * student
void ema_update(ModelBundle& bundle, double alpha);

struct GrlSchedule {
  double lambda_max = 1.0;
  // lambda_max * (2 / (1 + exp(-10 p)) - 1)
  double at(double progress) const;
};

// One forward pass worth of model parameters bound onto a tape.
class ModelGraph {
 public:
  // `trainable` false binds every parameter as a constant (used for inner
  // tapes such as VAT's power iteration).
  ModelGraph(ad::Tape& tape, const ModelBundle& bundle, Route regularizer_route = Route::full_model,
             bool trainable = true);

  ad::Tape& tape() const { return *tape_; }
  const ModelBundle& bundle() const { return *bundle_; }
  Route route() const { return route_; }

  ad::Var input(const Tensor& x) const;
  ad::Var features(ad::Var x) const;
  // Supervised head: always trains h.
  ad::Var classify(ad::Var z) const;
  // Regularizer head: h is a constant under Route::feature_extractor_only.
  ad::Var classify_reg(ad::Var z) const;

  ad::Var logits(const Tensor& x) const { return classify(features(input(x))); }
  ad::Var reg_logits(const Tensor& x) const { return classify_reg(features(input(x))); }
  ad::Var reg_logits(ad::Var x) const { return classify_reg(features(x)); }
  // EMA teacher forward; every parameter is a constant.
  ad::Var teacher_logits(const Tensor& x) const;

  // Domain probability of "source" for each row of z, after gradient reversal
  // with coefficient lambda. With conditioning p (B, K) the discriminator sees
  // flatten(z outer p) instead of z.
  ad::Var discriminate(ad::Var z, std::optional<ad::Var> conditioning, double lambda) const;

  // d(loss)/d(param) for every entry of bundle.params after tape.backward().
  std::vector<Tensor> gradients() const;

 private:
  ad::Var mlp(ad::Var x, std::size_t first, std::size_t layers, const std::vector<ad::Var>& leaves,
              bool relu_last) const;

  ad::Tape* tape_;
  const ModelBundle* bundle_;
  Route route_;
  std::vector<ad::Var> leaves_;
  std::vector<ad::Var> frozen_head_;
  mutable std::vector<ad::Var> teacher_leaves_;
};

// Text checkpoint: header, config line, then one record per tensor with the
// name, rank, extents and hexadecimal floats, so save -> load -> save is
// byte-identical.
void save_checkpoint(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_checkpoint(const std::filesystem::path& path);
std::string serialize_checkpoint(const ModelBundle& bundle);
ModelBundle parse_checkpoint(const std::string& text);

}  // namespace shiftbench
