#pragma once

// Self-contained SVG output. Every function is a pure function of its inputs
// so identical inputs give byte-identical files.

#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "shiftbench/bench.hpp"
#include "shiftbench/domains.hpp"
#include "shiftbench/trainer.hpp"

namespace shiftbench {

enum class PlotKind { boundary, convergence, adist_bars, table };
PlotKind parse_plot_kind(const std::string& name);

// Predicted class per row.
using BatchClassifier = std::function<std::vector<int>(const Tensor&)>;
BatchClassifier model_classifier(const ModelBundle& bundle);

// Decision regions on a grid x grid raster over the data's bounding box, with
// source (circles) and target (crosses) overlaid. 1-D inputs are drawn as a
// band: the raster varies along x only.
std::string svg_boundary(const DomainDataset& dataset, const BatchClassifier& classify, std::size_t grid = 200);

struct CurveSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (step, value)
};

// One polyline per series, one vertex per point.
std::string svg_convergence(const std::vector<CurveSeries>& series, const std::string& title);
std::vector<CurveSeries> history_series(const TrainHistory& history);
// Mean curve_accuracy per method for one task and split.
std::vector<CurveSeries> record_series(const std::vector<ExperimentRecord>& records, const std::string& task,
                                       const std::string& split = "transductive");

// Mean proxy A-distance per (task, method) with std whiskers.
std::string svg_adist_bars(const std::vector<ExperimentRecord>& records);
// mean +- std grid for one metric and split.
std::string svg_table(const std::vector<ExperimentRecord>& records, const std::string& metric = "accuracy",
                      const std::string& split = "inductive");

// Writes through a temporary file and a rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace shiftbench
