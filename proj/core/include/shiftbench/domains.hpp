#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "shiftbench/random.hpp"
#include "shiftbench/tensor.hpp"

namespace shiftbench {

// Rows of `x` with one label each.
struct LabeledSet {
  Tensor x;
  std::vector<int> y;

  std::size_t size() const { return y.size(); }
  friend bool operator==(const LabeledSet&, const LabeledSet&) = default;
};

struct DensityOracle {
  std::function<double(std::span<const double>)> source;
  std::function<double(std::span<const double>)> target;
  // False when the source is a set of point masses (no density exists).
  bool source_absolutely_continuous = true;
};

enum class ScenarioKind { none, toy1d, two_moons, support_a, support_b, support_c, support_d, csv };

const char* to_string(ScenarioKind kind);

struct DatasetMetadata {
  std::string task;
  std::size_t num_classes = 2;
  std::size_t input_dim = 2;
  ScenarioKind scenario = ScenarioKind::none;
  friend bool operator==(const DatasetMetadata&, const DatasetMetadata&) = default;
};

// Opt-in token for reading the hidden target-train labels. Only evaluation,
// diagnostics, the oracle baseline and exporters ask for one.
class LabelAccess {
 public:
  static LabelAccess evaluation() { return LabelAccess(); }

 private:
  LabelAccess() = default;
};

class DomainDataset {
 public:
  DomainDataset() = default;
  DomainDataset(DatasetMetadata meta, LabeledSet source, Tensor target_unlabeled, std::vector<int> hidden_labels,
                LabeledSet target_test);

  const DatasetMetadata& metadata() const { return meta_; }
  const LabeledSet& source() const { return source_; }
  const Tensor& target_unlabeled() const { return target_unlabeled_; }
  const LabeledSet& target_test() const { return target_test_; }
  const std::vector<int>& hidden_target_labels(LabelAccess) const { return hidden_labels_; }

  const std::optional<DensityOracle>& density_oracle() const { return oracle_; }
  void set_density_oracle(DensityOracle oracle) { oracle_ = std::move(oracle); }

  // The labeling function shared by both domains, when the generator knows it.
  const std::function<int(std::span<const double>)>& labeling() const { return labeling_; }
  void set_labeling(std::function<int(std::span<const double>)> fn) { labeling_ = std::move(fn); }

  // Equal samples, labels and class count; task name, oracle and labeling
  // function are not compared.
  bool same_data(const DomainDataset& other) const;

 private:
  DatasetMetadata meta_;
  LabeledSet source_;
  Tensor target_unlabeled_;
  std::vector<int> hidden_labels_;
  LabeledSet target_test_;
  std::optional<DensityOracle> oracle_;
  std::function<int(std::span<const double>)> labeling_;
};

// --- generators ----------------------------------------------------------------

// One labeled point per class at c (class 0) and d (class 1); target is
// U(0, 1) labeled by x > 0.5. n_target unlabeled draws plus a held-out
// test set of n_target / 4 draws. Requires 0 <= c <= 0.5 < d <= 1.
DomainDataset gen_toy1d(double c, double d, std::size_t n_target, std::uint64_t seed);

// Label of the toy1d task: 0 iff x <= 0.5.
int toy1d_label(double x);

struct TwoMoonsParams {
  std::size_t n_src = 200;
  std::size_t n_tgt = 200;
  double rotation_deg = 30.0;
  std::array<double, 2> translation{0.0, 0.0};
  double noise_sigma = 0.1;
};

// Two interleaved half circles centred on the origin. Labels are the nearer
// noiseless arc. Target points are the same construction rotated about the
// origin (the moons' centroid) and translated; labels are carried through the
// transform. 80% of each domain's draws are train, 20% test.
DomainDataset gen_two_moons_shift(const TwoMoonsParams& params, std::uint64_t seed);

struct Rect {
  double x0, x1, y0, y1;
  double area() const { return (x1 - x0) * (y1 - y0); }
  bool contains(std::span<const double> p) const {
    return p[0] >= x0 && p[0] <= x1 && p[1] >= y0 && p[1] <= y1;
  }
};

struct SupportLayout {
  Rect source;
  Rect target;
};

// Rectangle placement for each support-overlap regime:
// a: target inside source, b: source inside target, c: disjoint, d: overlapping, not nested.
SupportLayout support_layout(char kind);
// Shared linear labeling boundary of the support scenarios: 1 iff x1 > 0.25 x0.
int support_label(std::span<const double> x);

DomainDataset gen_support_scenario(char kind, std::size_t n_src, std::size_t n_tgt, std::uint64_t seed);

// --- augmentation ----------------------------------------------------------------

enum class AugmentKind { identity, weak, strong };

struct AugmentationSpec {
  AugmentKind kind = AugmentKind::weak;
  double weak_noise_sigma = 0.05;
  double strong_noise_sigma = 0.25;
  double dropout_prob = 0.1;
  double rotation_deg = 15.0;

  void validate() const;
  static AugmentationSpec identity() { return {AugmentKind::identity}; }
  static AugmentationSpec weak() { return {AugmentKind::weak}; }
  static AugmentationSpec strong() { return {AugmentKind::strong}; }
  friend bool operator==(const AugmentationSpec&, const AugmentationSpec&) = default;
};

std::vector<double> augment(std::span<const double> x, const AugmentationSpec& spec, Rng& rng);
std::vector<double> augment(std::span<const double> x, const AugmentationSpec& spec, std::uint64_t seed);
// Row-by-row augmentation of a batch.
Tensor augment_batch(const Tensor& x, const AugmentationSpec& spec, Rng& rng);

// --- importance weighting --------------------------------------------------------

// p_t(x) / p_s(x). Throws DataError "density ratio undefined" for point-mass
// sources and "support violation" where p_s(x) = 0.
double importance_weight(std::span<const double> x, const DensityOracle& oracle);

// --- CSV ---------------------------------------------------------------------------

struct CsvSchema {
  std::size_t num_classes = 2;
  std::string task = "csv";
};

// Header `f0,...,fD,label,domain,split`; domain is src|tgt, split train|test.
DomainDataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
DomainDataset parse_csv(const std::string& text, const CsvSchema& schema);
// Source rows, then target-train rows, then target-test rows. Floats are
// written with 17 significant digits so load_csv(export_csv(d)) == d.
std::string export_csv(const DomainDataset& dataset);
void save_csv(const DomainDataset& dataset, const std::filesystem::path& path);

}  // namespace shiftbench
