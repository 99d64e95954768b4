// shiftbench: generate datasets, train single runs, run experiment matrices,
// compute divergence diagnostics and draw plots.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "shiftbench/analysis.hpp"
#include "shiftbench/bench.hpp"
#include "shiftbench/models.hpp"
#include "shiftbench/plot.hpp"
#include "shiftbench/trainer.hpp"

namespace fs = std::filesystem;
using namespace shiftbench;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::size_t jobs = 1;
  std::string format = "csv";
};

fs::path output_dir(const Common& c, const ExperimentConfig* cfg) {
  if (!c.out.empty()) return c.out;
  if (cfg && !cfg->output_dir.empty()) return cfg->output_dir;
  if (const char* env = std::getenv("SHIFTBENCH_OUT"); env && *env) return env;
  return "shiftbench_out";
}

ExperimentConfig load_or_default(const Common& c, const std::string& task, const std::string& method) {
  ExperimentConfig cfg;
  if (!c.config.empty()) {
    cfg = parse_config(c.config);
  } else {
    TaskSpec t;
    t.generator = task;
    t.name = task;
    cfg.tasks.push_back(t);
    cfg.methods.push_back(method.empty() ? "source_only" : method);
  }
  if (!method.empty()) cfg.methods = {method};
  if (c.seed) cfg.seeds = {*c.seed};
  cfg.validate();
  return cfg;
}

void print_records(const std::vector<ExperimentRecord>& recs, const std::string& format) {
  if (format == "txt") {
    for (const auto& r : recs) {
      std::printf("%-24s %-14s %-10s %-18s step %-6zu %.6g\n", r.method.c_str(), r.task.c_str(), r.seed.c_str(),
                  r.metric.c_str(), r.step, r.value);
    }
  } else {
    std::cout << records_to_csv(recs);
  }
}

DomainDataset load_dataset(const std::string& path, std::size_t k) { return load_csv(path, CsvSchema{k, "csv"}); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised learning and domain adaptation benchmark"};
  app.require_subcommand(1);
  app.footer("\n" + config_reference() + "\nEnvironment: SHIFTBENCH_OUT sets the default output directory.");
  Common c;
  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("--config", c.config, "Experiment config file");
    sub->add_option("--seed", c.seed, "Seed (overrides the config's seed list)");
    sub->add_option("--out", c.out, "Output directory (default: $SHIFTBENCH_OUT or ./shiftbench_out)");
    sub->add_option("--format", c.format, "Stdout format")->check(CLI::IsMember({"csv", "txt"}));
  };

  std::string task = "two_moons", method, checkpoint, data, records, kind = "table", metric = "accuracy",
              split = "inductive", plot_task;
  std::size_t num_classes = 2;

  auto* gen = app.add_subcommand("gen", "Export a generated dataset to CSV");
  add_common(gen, true);
  gen->add_option("--task", task, "Generator when no config is given")
      ->check(CLI::IsMember(std::vector<std::string>{"toy1d", "two_moons", "support_a", "support_b", "support_c",
                                                      "support_d"}));

  auto* tr = app.add_subcommand("train", "Train one model and write checkpoint, records and plots");
  add_common(tr, true);
  tr->add_option("--task", task, "Generator when no config is given");
  tr->add_option("--method", method, "Method (overrides the config's list)");

  auto* bench = app.add_subcommand("bench", "Run a methods x tasks x seeds matrix");
  add_common(bench, true);
  bench->get_option("--config")->required();
  bench->add_option("--jobs", c.jobs, "Worker threads")->check(CLI::Range(std::size_t{1}, std::size_t{256}));

  auto* adist = app.add_subcommand("adist", "Divergence diagnostics of a checkpoint on a dataset");
  add_common(adist, false);
  adist->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  adist->add_option("--data", data, "Dataset CSV")->required();
  adist->add_option("--num-classes", num_classes, "Classes in the dataset CSV");

  auto* plot = app.add_subcommand("plot", "Draw an SVG plot");
  add_common(plot, false);
  plot->add_option("--kind", kind, "boundary | convergence | adist_bars | table")
      ->check(CLI::IsMember({"boundary", "convergence", "adist_bars", "table"}));
  plot->add_option("--records", records, "Results CSV (convergence, adist_bars, table)");
  plot->add_option("--checkpoint", checkpoint, "Checkpoint (boundary)");
  plot->add_option("--data", data, "Dataset CSV (boundary)");
  plot->add_option("--num-classes", num_classes, "Classes in the dataset CSV");
  plot->add_option("--task", plot_task, "Task for convergence plots");
  plot->add_option("--metric", metric, "Metric for tables");
  plot->add_option("--split", split, "Split for tables")->check(CLI::IsMember({"transductive", "inductive"}));

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const ExperimentConfig cfg = load_or_default(c, task, "");
      const fs::path out = output_dir(c, &cfg);
      fs::create_directories(out);
      for (const auto& t : cfg.tasks) {
        for (auto s : cfg.seeds) {
          const fs::path p = out / (t.name + "_seed" + std::to_string(s) + ".csv");
          save_csv(t.make(s), p);
          std::cout << p.string() << "\n";
        }
      }
      return 0;
    }
    if (*tr) {
      ExperimentConfig cfg = load_or_default(c, task, method);
      const TaskSpec& t = cfg.tasks.front();
      const std::string m = cfg.methods.front();
      const std::uint64_t s = cfg.seeds.front();
      const fs::path out = output_dir(c, &cfg);
      fs::create_directories(out);
      const DomainDataset ds = t.make(s);
      const TrainResult r = train(ds, cfg.train_config(m, t, s));
      const auto recs = run_records(t.name, m, s, ds, r, cfg.train);
      emit_csv(recs, out / "train_records.csv");
      save_checkpoint(r.model, out / "checkpoint.txt");
      write_text_file(out / "convergence.svg", svg_convergence(history_series(r.history), t.name + " / " + m));
      if (ds.metadata().input_dim <= 2) write_text_file(out / "boundary.svg", svg_boundary(ds, model_classifier(r.model)));
      std::vector<ExperimentRecord> finals;
      for (const auto& rec : recs)
        if (rec.metric == "accuracy" || rec.metric == "category_accuracy" || rec.metric == "best_accuracy") finals.push_back(rec);
      print_records(finals, c.format);
      return 0;
    }
    if (*bench) {
      ExperimentConfig cfg = parse_config(c.config);
      if (c.seed) cfg.seeds = {*c.seed};
      const fs::path out = output_dir(c, &cfg);
      RunOptions opt;
      opt.jobs = c.jobs;
      opt.output_dir = out;
      opt.log = [](const std::string& msg) { std::cerr << msg << "\n"; };
      const MatrixResult res = run_matrix(cfg, opt);
      emit_csv(res.records, out / "results.csv");
      if (cfg.plots) {
        try {
          write_text_file(out / "table.svg", svg_table(res.records));
        } catch (const DataError&) {
        }
        try {
          write_text_file(out / "adist_bars.svg", svg_adist_bars(res.records));
        } catch (const DataError&) {
        }
        for (const auto& t : cfg.tasks) {
          try {
            write_text_file(out / ("convergence_" + t.name + ".svg"),
                            svg_convergence(record_series(res.records, t.name), t.name));
          } catch (const DataError&) {
          }
        }
      }
      if (c.format == "txt") {
        std::cout << render_table_text(res.records, "accuracy", "transductive") << "\n"
                  << render_table_text(res.records, "accuracy", "inductive");
      } else {
        std::cout << records_to_csv(res.records);
      }
      for (const auto& f : res.failures) std::cerr << "failed: " << f << "\n";
      return res.failures.empty() ? 0 : 1;
    }
    if (*adist) {
      const ModelBundle model = load_checkpoint(checkpoint);
      const DomainDataset ds = load_dataset(data, num_classes);
      print_records(analysis_records("csv", "checkpoint", c.seed.value_or(0), ds, model, 4), c.format);
      return 0;
    }
    if (*plot) {
      const fs::path out = output_dir(c, nullptr);
      const fs::path file = out / (kind + ".svg");
      std::string svg;
      switch (parse_plot_kind(kind)) {
        case PlotKind::boundary: {
          if (checkpoint.empty() || data.empty()) throw ConfigError("boundary plot needs --checkpoint and --data");
          const ModelBundle model = load_checkpoint(checkpoint);
          svg = svg_boundary(load_dataset(data, num_classes), model_classifier(model));
          break;
        }
        case PlotKind::convergence: {
          if (records.empty()) throw ConfigError("convergence plot needs --records");
          const auto recs = load_records_csv(records);
          std::string tk = plot_task;
          if (tk.empty() && !recs.empty()) tk = recs.front().task;
          svg = svg_convergence(record_series(recs, tk), tk);
          break;
        }
        case PlotKind::adist_bars:
          if (records.empty()) throw ConfigError("adist_bars plot needs --records");
          svg = svg_adist_bars(load_records_csv(records));
          break;
        case PlotKind::table:
          if (records.empty()) throw ConfigError("table plot needs --records");
          svg = svg_table(load_records_csv(records), metric, split);
          break;
      }
      write_text_file(file, svg);
      std::cout << file.string() << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
