#include "shiftbench/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "shiftbench/error.hpp"

namespace shiftbench {

PlotKind parse_plot_kind(const std::string& name) {
  if (name == "boundary") return PlotKind::boundary;
  if (name == "convergence") return PlotKind::convergence;
  if (name == "adist_bars") return PlotKind::adist_bars;
  if (name == "table") return PlotKind::table;
  throw ConfigError("unknown plot kind '" + name + "' (boundary, convergence, adist_bars, table)");
}

BatchClassifier model_classifier(const ModelBundle& bundle) {
  return [&bundle](const Tensor& x) { return argmax_rows(predict(bundle, x)); };
}

namespace {

const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
                          "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd"};
const char* kRegion[] = {"#d6e0f0", "#f6dfcf", "#d9ecdc", "#f0d4d5", "#e0dbef",
                         "#e6ded8", "#f4e0ee", "#e2e2e2", "#f0ead3", "#d6ecf3"};

const char* color(std::size_t i) { return kPalette[i % 10]; }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    if (ch == '&') out += "&amp;";
    else if (ch == '<') out += "&lt;";
    else if (ch == '>') out += "&gt;";
    else if (ch == '"') out += "&quot;";
    else out += ch;
  }
  return out;
}

std::string header(double w, double h) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" viewBox=\"0 0 " + num(w) + " " + num(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

std::string text(double x, double y, const std::string& s, const char* anchor = "start") {
  return "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" text-anchor=\"" + anchor + "\">" + escape(s) + "</text>\n";
}

}  // namespace

std::string svg_boundary(const DomainDataset& ds, const BatchClassifier& classify, std::size_t grid) {
  const std::size_t dim = ds.metadata().input_dim;
  if (dim != 1 && dim != 2) throw ShapeError("boundary plot needs 1-D or 2-D inputs");
  if (grid < 2) throw ConfigError("boundary plot grid must be >= 2");
  const std::vector<const Tensor*> sets{&ds.source().x, &ds.target_unlabeled(), &ds.target_test().x};
  double lo[2] = {INFINITY, INFINITY}, hi[2] = {-INFINITY, -INFINITY};
  for (const Tensor* t : sets)
    for (std::size_t i = 0; i < t->rows(); ++i)
      for (std::size_t d = 0; d < dim; ++d) {
        lo[d] = std::min(lo[d], t->at(i, d));
        hi[d] = std::max(hi[d], t->at(i, d));
      }
  if (dim == 1) {
    lo[1] = -1.0;
    hi[1] = 1.0;
  }
  for (int d = 0; d < 2; ++d) {
    if (!std::isfinite(lo[d])) {
      lo[d] = -1.0;
      hi[d] = 1.0;
    }
    const double pad = std::max(0.1 * (hi[d] - lo[d]), 0.05);
    lo[d] -= pad;
    hi[d] += pad;
  }
  const double size = 400.0, margin = 30.0, cell = size / static_cast<double>(grid);
  auto sx = [&](double x) { return margin + (x - lo[0]) / (hi[0] - lo[0]) * size; };
  auto sy = [&](double y) { return margin + size - (y - lo[1]) / (hi[1] - lo[1]) * size; };

  std::string out = header(size + 2 * margin, size + 2 * margin + 20);
  out += "<g shape-rendering=\"crispEdges\">\n";
  for (std::size_t r = 0; r < grid; ++r) {
    Tensor row(Shape{grid, dim});
    const double y = hi[1] - (static_cast<double>(r) + 0.5) / static_cast<double>(grid) * (hi[1] - lo[1]);
    for (std::size_t c = 0; c < grid; ++c) {
      row.at(c, 0) = lo[0] + (static_cast<double>(c) + 0.5) / static_cast<double>(grid) * (hi[0] - lo[0]);
      if (dim == 2) row.at(c, 1) = y;
    }
    const std::vector<int> pred = classify(row);
    if (pred.size() != grid) throw ShapeError("boundary plot: classifier returned the wrong number of labels");
    for (std::size_t c = 0; c < grid;) {
      std::size_t e = c;
      while (e < grid && pred[e] == pred[c]) ++e;
      out += "<rect x=\"" + num(margin + static_cast<double>(c) * cell) + "\" y=\"" +
             num(margin + static_cast<double>(r) * cell) + "\" width=\"" + num(static_cast<double>(e - c) * cell) +
             "\" height=\"" + num(cell) + "\" fill=\"" + kRegion[static_cast<std::size_t>(pred[c]) % 10] + "\"/>\n";
      c = e;
    }
  }
  out += "</g>\n";
  auto ypos = [&](const Tensor& x, std::size_t i, double band) { return dim == 2 ? sy(x.at(i, 1)) : sy(band); };
  const LabeledSet& src = ds.source();
  for (std::size_t i = 0; i < src.size(); ++i) {
    out += "<circle cx=\"" + num(sx(src.x.at(i, 0))) + "\" cy=\"" + num(ypos(src.x, i, 0.4)) + "\" r=\"3\" fill=\"" +
           color(static_cast<std::size_t>(src.y[i])) + "\" stroke=\"black\" stroke-width=\"0.5\"/>\n";
  }
  const Tensor& tu = ds.target_unlabeled();
  for (std::size_t i = 0; i < tu.rows(); ++i) {
    const double x = sx(tu.at(i, 0)), y = ypos(tu, i, -0.4);
    out += "<path d=\"M" + num(x - 2.5) + " " + num(y - 2.5) + "L" + num(x + 2.5) + " " + num(y + 2.5) + "M" +
           num(x - 2.5) + " " + num(y + 2.5) + "L" + num(x + 2.5) + " " + num(y - 2.5) +
           "\" stroke=\"#333\" stroke-width=\"1\"/>\n";
  }
  out += "<rect x=\"" + num(margin) + "\" y=\"" + num(margin) + "\" width=\"" + num(size) + "\" height=\"" + num(size) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  out += text(margin, margin + size + 20, "x: [" + num(lo[0]) + ", " + num(hi[0]) + "]  circles: source  crosses: target");
  out += "</svg>\n";
  return out;
}

std::string svg_convergence(const std::vector<CurveSeries>& series, const std::string& title) {
  if (series.empty()) throw DataError("convergence plot: no series");
  double xmax = 0.0, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    if (s.points.empty()) throw DataError("convergence plot: series '" + s.name + "' is empty");
    for (const auto& [x, y] : s.points) {
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (ymin >= 0.0 && ymax <= 1.0) {
    ymin = 0.0;
    ymax = 1.0;
  } else if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  if (xmax <= 0.0) xmax = 1.0;
  const double w = 560, h = 320, ml = 50, mt = 30, legend = 170;
  auto sx = [&](double x) { return ml + x / xmax * w; };
  auto sy = [&](double y) { return mt + h - (y - ymin) / (ymax - ymin) * h; };
  std::string out = header(ml + w + legend, mt + h + 40);
  out += text(ml, 18, title);
  out += "<rect x=\"" + num(ml) + "\" y=\"" + num(mt) + "\" width=\"" + num(w) + "\" height=\"" + num(h) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
  out += text(ml - 4, sy(ymin) + 4, num(ymin), "end") + text(ml - 4, sy(ymax) + 4, num(ymax), "end");
  out += text(sx(0), mt + h + 16, "0", "middle") + text(sx(xmax), mt + h + 16, std::to_string(static_cast<long long>(xmax)), "middle");
  out += text(ml + w / 2, mt + h + 32, "step", "middle");
  for (std::size_t k = 0; k < series.size(); ++k) {
    out += "<polyline fill=\"none\" stroke=\"" + std::string(color(k)) + "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < series[k].points.size(); ++i) {
      out += (i ? " " : "") + num(sx(series[k].points[i].first)) + "," + num(sy(series[k].points[i].second));
    }
    out += "\"/>\n";
    const double ly = mt + 12 + 16 * static_cast<double>(k);
    out += "<line x1=\"" + num(ml + w + 10) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(ml + w + 30) + "\" y2=\"" +
           num(ly - 4) + "\" stroke=\"" + color(k) + "\" stroke-width=\"2\"/>\n";
    out += text(ml + w + 34, ly, series[k].name);
  }
  out += "</svg>\n";
  return out;
}

std::vector<CurveSeries> history_series(const TrainHistory& history) {
  CurveSeries tr{"transductive accuracy", {}}, in{"inductive accuracy", {}};
  for (const auto& r : history.records) {
    tr.points.emplace_back(static_cast<double>(r.step), r.transductive_accuracy);
    in.points.emplace_back(static_cast<double>(r.step), r.inductive_accuracy);
  }
  return {tr, in};
}

std::vector<CurveSeries> record_series(const std::vector<ExperimentRecord>& records, const std::string& task,
                                       const std::string& split) {
  std::map<std::string, std::vector<std::pair<double, double>>> by_method;
  for (const auto& r : records) {
    if (r.task == task && r.split == split && r.metric == "curve_accuracy" && r.seed == "mean") {
      by_method[r.method].emplace_back(static_cast<double>(r.step), r.value);
    }
  }
  std::vector<CurveSeries> out;
  for (auto& [m, pts] : by_method) {
    std::sort(pts.begin(), pts.end());
    out.push_back({m, std::move(pts)});
  }
  if (out.empty()) throw DataError("convergence plot: no curve_accuracy aggregates for task '" + task + "'");
  return out;
}

std::string svg_adist_bars(const std::vector<ExperimentRecord>& records) {
  std::vector<std::string> tasks, methods;
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> v;
  for (const auto& r : records) {
    if (r.metric != "proxy_a_distance" || (r.seed != "mean" && r.seed != "std")) continue;
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    auto& cell = v[{r.task, r.method}];
    (r.seed == "mean" ? cell.first : cell.second) = r.value;
  }
  if (v.empty()) throw DataError("adist_bars: records hold no proxy_a_distance aggregates");
  const double bw = 16, gap = 24, ml = 50, mt = 30, h = 260, legend = 170;
  const double group = bw * static_cast<double>(methods.size()) + gap;
  const double w = group * static_cast<double>(tasks.size());
  auto sy = [&](double y) { return mt + h - y / 2.0 * h; };
  std::string out = header(ml + w + legend, mt + h + 40);
  out += text(ml, 18, "proxy A-distance (mean over seeds, whiskers = std)");
  out += "<line x1=\"" + num(ml) + "\" y1=\"" + num(sy(0)) + "\" x2=\"" + num(ml + w) + "\" y2=\"" + num(sy(0)) +
         "\" stroke=\"black\"/>\n";
  out += text(ml - 4, sy(0) + 4, "0", "end") + text(ml - 4, sy(2) + 4, "2", "end");
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const double gx = ml + gap / 2 + group * static_cast<double>(t);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto it = v.find({tasks[t], methods[m]});
      if (it == v.end()) continue;
      const double x = gx + bw * static_cast<double>(m);
      const double mean = std::clamp(it->second.first, 0.0, 2.0);
      out += "<rect x=\"" + num(x) + "\" y=\"" + num(sy(mean)) + "\" width=\"" + num(bw - 2) + "\" height=\"" +
             num(sy(0) - sy(mean)) + "\" fill=\"" + color(m) + "\"/>\n";
      const double lo = std::max(0.0, mean - it->second.second), hi = std::min(2.0, mean + it->second.second);
      out += "<line x1=\"" + num(x + bw / 2 - 1) + "\" y1=\"" + num(sy(lo)) + "\" x2=\"" + num(x + bw / 2 - 1) +
             "\" y2=\"" + num(sy(hi)) + "\" stroke=\"black\"/>\n";
    }
    out += text(gx + group / 2 - gap / 2, mt + h + 16, tasks[t], "middle");
  }
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const double ly = mt + 12 + 16 * static_cast<double>(m);
    out += "<rect x=\"" + num(ml + w + 10) + "\" y=\"" + num(ly - 9) + "\" width=\"10\" height=\"10\" fill=\"" +
           color(m) + "\"/>\n" + text(ml + w + 26, ly, methods[m]);
  }
  out += "</svg>\n";
  return out;
}

std::string svg_table(const std::vector<ExperimentRecord>& records, const std::string& metric,
                      const std::string& split) {
  const std::string txt = render_table_text(records, metric, split);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < txt.size()) {
    const auto end = txt.find('\n', start);
    lines.push_back(txt.substr(start, end - start));
    start = end + 1;
  }
  if (lines.size() <= 2) throw DataError("table: no " + metric + " aggregates for split " + split);
  std::size_t width = 0;
  for (const auto& l : lines) width = std::max(width, l.size());
  std::string out = header(20 + 7.2 * static_cast<double>(width), 20 + 16 * static_cast<double>(lines.size()));
  out += "<g font-family=\"monospace\" xml:space=\"preserve\">\n";
  for (std::size_t i = 0; i < lines.size(); ++i) out += text(10, 22 + 16 * static_cast<double>(i), lines[i]);
  out += "</g>\n</svg>\n";
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << contents;
    if (!out) throw Error("write failed for " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error("cannot write " + path.string() + ": " + ec.message());
}

}  // namespace shiftbench
