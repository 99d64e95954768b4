#pragma once

// Experiment matrices: config files, methods x tasks x seeds runs, CSV
// records with mean / population-std aggregates.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "shiftbench/domains.hpp"
#include "shiftbench/trainer.hpp"

namespace shiftbench {

struct TaskSpec {
  std::string name;
  // toy1d | two_moons | support_a | support_b | support_c | support_d | csv
  std::string generator = "two_moons";
  double c = 0.25;
  double d = 0.75;
  std::size_t n_target = 500;
  std::size_t n_src = 200;
  std::size_t n_tgt = 200;
  double rotation = 30.0;
  double translation_x = 0.0;
  double translation_y = 0.0;
  double noise = 0.1;
  std::string csv_path;
  std::size_t num_classes = 2;
  AugmentationSpec weak = AugmentationSpec::weak();
  AugmentationSpec strong = AugmentationSpec::strong();
  // VAT radius for this task's input scale; unset uses [train] vat_epsilon.
  std::optional<double> vat_epsilon;

  void validate() const;
  DomainDataset make(std::uint64_t seed) const;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

const std::vector<std::string>& generator_names();

// The [train] section: everything a run needs besides task, method and seed.
struct TrainSettings {
  std::size_t steps = 2000;
  std::size_t batch_labeled = 32;
  std::size_t batch_unlabeled = 32;
  std::size_t eval_every = 100;
  double lr = 0.1;
  double momentum = 0.9;
  double classifier_lr_multiplier = 1.0;
  double weight_decay = 0.0;
  Route route = Route::feature_extractor_only;
  double uda_ramp_up = 0.1;
  std::vector<std::size_t> hidden{64, 64};
  std::size_t feature_dim = 16;
  // Hyperparameters copied into whichever SSL / UDA config a method uses.
  SslConfig ssl;
  UdaConfig uda;
  bool analysis = true;
  std::size_t stump_thresholds = 4;

  friend bool operator==(const TrainSettings&, const TrainSettings&) = default;
};

struct ExperimentConfig {
  std::vector<TaskSpec> tasks;
  std::vector<std::string> methods;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  TrainSettings train;
  std::string output_dir;
  bool plots = true;

  void validate() const;
  TrainConfig train_config(const std::string& method, const TaskSpec& task, std::uint64_t seed) const;
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Line-based `key = value` with [task] (repeatable), [methods], [train] and
// [output] sections; `#` starts a comment. Errors carry the line number.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& config);
// Every key with its default, for --help.
std::string config_reference();

struct ExperimentRecord {
  std::string method;
  std::string task;
  std::string seed;  // a number, "mean" or "std"
  std::string split;
  std::string metric;
  std::size_t step = 0;
  double value = 0.0;
  friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

const std::vector<std::string>& metric_registry();

// (task, method, seed, split, metric, step); numeric seeds first, then mean, std.
void sort_records(std::vector<ExperimentRecord>& records);
std::string records_to_csv(const std::vector<ExperimentRecord>& records);
void emit_csv(const std::vector<ExperimentRecord>& records, const std::filesystem::path& path);
std::vector<ExperimentRecord> parse_records_csv(const std::string& text);
std::vector<ExperimentRecord> load_records_csv(const std::filesystem::path& path);

// Mean and population std over seeds for every (task, method, split, metric,
// step) group of numeric-seed records.
std::vector<ExperimentRecord> aggregate(const std::vector<ExperimentRecord>& raw);

// Records of one trained model: final and best accuracies, curves and, when
// enabled, the analysis metrics on learned features.
std::vector<ExperimentRecord> run_records(const std::string& task, const std::string& method, std::uint64_t seed,
                                          const DomainDataset& dataset, const TrainResult& result,
                                          const TrainSettings& settings);
// Analysis metrics alone (used by the adist subcommand).
std::vector<ExperimentRecord> analysis_records(const std::string& task, const std::string& method,
                                               std::uint64_t seed, const DomainDataset& dataset,
                                               const ModelBundle& model, std::size_t stump_thresholds);

struct RunOptions {
  std::size_t jobs = 1;
  // Per-run record files go under <output_dir>/runs; empty disables them.
  std::filesystem::path output_dir;
  std::function<void(const std::string&)> log;
};

struct MatrixResult {
  std::vector<ExperimentRecord> records;  // raw + aggregates, sorted
  std::vector<std::string> failures;      // "task/method/seed: message"
};

MatrixResult run_matrix(const ExperimentConfig& config, const RunOptions& options = {});

// Aligned plain-text table of mean +- std for one metric and split.
std::string render_table_text(const std::vector<ExperimentRecord>& records, const std::string& metric = "accuracy",
                              const std::string& split = "inductive");

}  // namespace shiftbench
