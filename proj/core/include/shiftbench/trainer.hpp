#pragma once

// The training loop: supervised cross-entropy on the labeled source batch
// plus weighted regularizer terms on the unlabeled target batch.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "shiftbench/domains.hpp"
#include "shiftbench/models.hpp"
#include "shiftbench/optim.hpp"
#include "shiftbench/ssl.hpp"
#include "shiftbench/uda.hpp"

namespace shiftbench {

enum class Baseline { none, source_only, oracle };

// A method string parsed into its parts. Grammar:
//   source_only | oracle | <ssl> | <uda> | <uda>+<ssl>   optionally followed by @full or @g
// e.g. "fixmatch", "mcc+uda_consistency", "entropy_min@full".
struct MethodSpec {
  Baseline baseline = Baseline::source_only;
  std::optional<SslConfig> ssl;
  std::optional<UdaConfig> uda;
  // Overrides TrainConfig::loss_route when set.
  std::optional<Route> route;

  static MethodSpec parse(const std::string& text);
  std::string name() const;
  bool needs_unlabeled() const { return baseline == Baseline::none; }
  friend bool operator==(const MethodSpec&, const MethodSpec&) = default;
};

// Every accepted method name without route suffix or hybrids.
const std::vector<std::string>& method_names();

struct TrainConfig {
  std::size_t total_steps = 2000;
  std::size_t batch_labeled = 32;
  std::size_t batch_unlabeled = 32;
  std::uint64_t seed = 0;
  MethodSpec method;
  Route loss_route = Route::feature_extractor_only;
  std::size_t eval_every = 100;
  // Linear ramp of UDA term weights; SSL terms use SslConfig::ramp_up_fraction.
  double uda_ramp_up_fraction = 0.1;
  // Base rate 0.1 rather than 0.01: the networks here start from random
  // init instead of a pretrained backbone.
  OptimizerConfig optimizer = [] {
    OptimizerConfig o;
    o.base_lr = 0.1;
    return o;
  }();
  // input_dim and num_classes are taken from the dataset.
  ModelConfig model;

  void validate() const;
  Route effective_route() const { return method.route.value_or(loss_route); }
};

struct TermRecord {
  std::string name;
  double value = 0.0;
  double weight = 0.0;
  double mask_rate = 1.0;
  friend bool operator==(const TermRecord&, const TermRecord&) = default;
};

struct HistoryRecord {
  std::size_t step = 0;
  double supervised_loss = 0.0;
  std::vector<TermRecord> terms;
  // The scalar that was differentiated: supervised + sum weight * value.
  double total_loss = 0.0;
  double transductive_accuracy = 0.0;
  double inductive_accuracy = 0.0;
  double learning_rate = 0.0;

  // Fraction of unlabeled samples used by masked terms (1 if none are masked).
  double mask_rate() const;
  friend bool operator==(const HistoryRecord&, const HistoryRecord&) = default;
};

struct TrainHistory {
  std::vector<HistoryRecord> records;
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

struct TrainResult {
  ModelBundle model;
  TrainHistory history;
};

TrainResult train(const DomainDataset& dataset, const TrainConfig& config);

enum class Split { transductive, inductive };
const char* to_string(Split split);

struct Metrics {
  double accuracy = 0.0;
  // Mean per-class recall over classes present in the split.
  double category_accuracy = 0.0;
};

// Transductive: target_unlabeled against hidden labels. Inductive: target_test.
Metrics evaluate(const ModelBundle& bundle, const DomainDataset& dataset, Split split);
Metrics score_predictions(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t num_classes);
std::vector<int> argmax_rows(const Tensor& probabilities);

// Gradients of terms[0] (supervised, weight 1) + sum_{i>0} w_i * terms[i],
// where the builder constructs the terms on a graph with the given route.
using TermBuilder = std::function<std::vector<LossTerm>(const ModelGraph&)>;
std::vector<Tensor> route_gradients(const ModelBundle& bundle, const TermBuilder& build, Route route);

}  // namespace shiftbench
