// Acceptance suite. Prints one PASS/FAIL line per criterion followed by the
// measured numbers. Long experiment matrices are cached under --cache, keyed
// by the serialized config, so criteria that share runs compute them once.

#include <algorithm>
#include <cstdarg>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "shiftbench/analysis.hpp"
#include "shiftbench/bench.hpp"
#include "shiftbench/error.hpp"
#include "shiftbench/gradcheck.hpp"
#include "shiftbench/trainer.hpp"

using namespace shiftbench;
namespace ad = shiftbench::ad;
namespace fs = std::filesystem;

namespace {

struct Context {
  fs::path cache;
  std::string cli;
};

struct Outcome {
  bool pass = true;
  std::vector<std::string> lines;
  void note(const char* format, ...) __attribute__((format(printf, 2, 3)));
  void expect(bool ok, const std::string& what) {
    if (!ok) pass = false;
    lines.push_back(std::string(ok ? "ok   " : "MISS ") + what);
  }
};

void Outcome::note(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof buf, format, args);
  va_end(args);
  lines.emplace_back(buf);
}

std::string fmt(const char* format, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// --- shared tasks and matrices ------------------------------------------------------

const std::vector<std::string> kSsl{"entropy_min", "self_training", "pi_model",        "mean_teacher",
                                    "vat",         "mixmatch",      "uda_consistency", "fixmatch"};
const std::vector<std::string> kUda{"dann", "cdan", "mcc"};

TaskSpec moons_task() {
  TaskSpec t;
  t.name = "two_moons";
  t.generator = "two_moons";
  t.n_src = 200;
  t.n_tgt = 200;
  t.rotation = 30.0;
  t.vat_epsilon = 0.25;
  return t;
}

// Augmentation and VAT radius scaled to the unit interval.
TaskSpec toy_task() {
  TaskSpec t;
  t.name = "toy1d";
  t.generator = "toy1d";
  t.c = 0.25;
  t.d = 0.75;
  t.n_target = 500;
  t.weak.weak_noise_sigma = t.strong.weak_noise_sigma = 0.02;
  t.weak.strong_noise_sigma = t.strong.strong_noise_sigma = 0.08;
  t.weak.dropout_prob = t.strong.dropout_prob = 0.0;
  t.vat_epsilon = 0.1;
  return t;
}

TaskSpec support_task(char kind) {
  TaskSpec t;
  t.name = std::string("support_") + kind;
  t.generator = t.name;
  t.n_src = 200;
  t.n_tgt = 200;
  return t;
}

ExperimentConfig matrix_config(TaskSpec task, std::vector<std::string> methods) {
  ExperimentConfig c;
  c.tasks = {std::move(task)};
  c.methods = std::move(methods);
  c.seeds = {0, 1, 2};
  c.plots = false;
  return c;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

struct CachedMatrix {
  std::vector<ExperimentRecord> records;
  double seconds = 0.0;
  bool from_cache = false;
};

CachedMatrix run_cached(const Context& ctx, const ExperimentConfig& cfg) {
  const std::string text = serialize_config(cfg);
  char key[32];
  std::snprintf(key, sizeof key, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  fs::create_directories(ctx.cache);
  const fs::path csv = ctx.cache / (std::string(key) + ".csv");
  const fs::path meta = ctx.cache / (std::string(key) + ".seconds");
  const fs::path cfg_copy = ctx.cache / (std::string(key) + ".cfg");
  CachedMatrix out;
  if (fs::exists(csv) && fs::exists(meta) && fs::exists(cfg_copy)) {
    std::ifstream in(cfg_copy);
    std::stringstream ss;
    ss << in.rdbuf();
    if (ss.str() == text) {
      out.records = load_records_csv(csv);
      std::ifstream(meta) >> out.seconds;
      out.from_cache = true;
      return out;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  RunOptions opts;
  opts.log = [](const std::string& m) { std::fprintf(stderr, "  %s\n", m.c_str()); };
  MatrixResult r = run_matrix(cfg, opts);
  out.seconds = seconds_since(t0);
  out.records = std::move(r.records);
  emit_csv(out.records, csv);
  std::ofstream(meta) << out.seconds << "\n";
  std::ofstream(cfg_copy) << text;
  return out;
}

// The mean row of one (task, method, split, metric) group at its final step.
std::optional<double> mean_of(const std::vector<ExperimentRecord>& recs, const std::string& task,
                              const std::string& method, const std::string& split, const std::string& metric) {
  std::optional<double> v;
  std::size_t step = 0;
  for (const auto& r : recs) {
    if (r.seed == "mean" && r.task == task && r.method == method && r.split == split && r.metric == metric &&
        (!v || r.step >= step)) {
      v = r.value;
      step = r.step;
    }
  }
  return v;
}

bool any_failed(const std::vector<ExperimentRecord>& recs, const std::string& method) {
  for (const auto& r : recs)
    if (r.metric == "run_failed" && r.method == method && r.seed != "mean" && r.seed != "std" && r.value != 0.0)
      return true;
  return false;
}

void append(std::vector<ExperimentRecord>& to, const std::vector<ExperimentRecord>& from) {
  to.insert(to.end(), from.begin(), from.end());
}

std::vector<std::string> with_baselines(std::vector<std::string> methods) {
  methods.insert(methods.begin(), {"source_only"});
  return methods;
}

CachedMatrix moons_ssl(const Context& ctx) { return run_cached(ctx, matrix_config(moons_task(), with_baselines(kSsl))); }

CachedMatrix moons_rest(const Context& ctx) {
  std::vector<std::string> m{"oracle"};
  for (const auto& u : kUda) m.push_back(u);
  m.push_back("mcc+uda_consistency");
  m.push_back("entropy_min@full");
  return run_cached(ctx, matrix_config(moons_task(), m));
}

CachedMatrix task_matrix(const Context& ctx, const TaskSpec& task, bool importance) {
  std::vector<std::string> m{"source_only", "oracle"};
  m.insert(m.end(), kSsl.begin(), kSsl.end());
  m.insert(m.end(), kUda.begin(), kUda.end());
  if (importance) m.push_back("importance_weighting");
  return run_cached(ctx, matrix_config(task, m));
}

std::string matrix_timing(const CachedMatrix& m) {
  return fmt(m.from_cache ? "matrix time %.1f s (recorded when the cache was filled)" : "matrix time %.1f s",
             m.seconds);
}

// --- criterion 1: gradient correctness on random graphs ---------------------------------

constexpr std::size_t kB = 4, kK = 3;
constexpr int kBlockKinds = 20;
constexpr int kHeadKinds = 5;
const char* kBlockNames[kBlockKinds] = {"add",     "sub",       "mul",         "div/add_scalar", "matmul",
                                        "relu",    "exp/scale", "log",         "softmax",        "log_softmax",
                                        "sigmoid", "transpose", "concat_rows", "outer_rows",     "reshape",
                                        "sum_rows", "stop_gradient", "grad_reverse", "scale", "mean"};
const char* kHeadNames[kHeadKinds] = {"cross_entropy", "kl_div", "squared_error", "binary_cross_entropy", "sum"};

struct Program {
  std::vector<int> blocks;
  int head = 0;
  std::vector<Tensor> params;  // params[0] is the input
  std::vector<Tensor> consts;
  std::vector<double> scalars;
};

Tensor rand_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.normal() * scale;
  return t;
}

Program make_program(std::uint64_t seed, int forced_block, int forced_head) {
  Rng rng(mix_seed(seed, 77));
  Program p;
  p.params.push_back(rand_tensor({kB, kK}, rng));
  const std::size_t n = 4 + rng.index(3);
  p.blocks.push_back(forced_block);
  for (std::size_t i = 1; i < n; ++i) p.blocks.push_back(static_cast<int>(rng.index(kBlockKinds)));
  std::swap(p.blocks[0], p.blocks[rng.index(p.blocks.size())]);
  p.head = forced_head;
  for (int b : p.blocks) {
    switch (b) {
      case 0: case 2: case 3: case 5: case 15: p.params.push_back(rand_tensor({kB, kK}, rng)); break;
      case 1: p.params.push_back(rand_tensor({kK}, rng)); break;
      case 4: p.params.push_back(rand_tensor({kK, kK}, rng, 0.6)); break;
      case 11: p.params.push_back(rand_tensor({kK, kB}, rng)); break;
      case 12: {
        p.params.push_back(rand_tensor({kB, kK}, rng));
        Tensor sel({kB, 2 * kB});
        for (std::size_t i = 0; i < kB; ++i) sel.at(i, i) = sel.at(i, kB + i) = 0.5;
        p.consts.push_back(sel);
        break;
      }
      case 13:
        p.params.push_back(rand_tensor({kB, kK}, rng));
        p.params.push_back(rand_tensor({kK * kK, kK}, rng, 0.5));
        break;
      case 14: p.params.push_back(rand_tensor({1, kB * kK}, rng)); break;
      case 16: p.consts.push_back(rand_tensor({kB, kK}, rng)); break;
      case 17: p.scalars.push_back(rng.uniform(0.5, 2.0)); break;
      case 18: p.scalars.push_back(rng.uniform(-1.5, 1.5)); break;
      default: break;
    }
  }
  switch (p.head) {
    case 0: {
      Tensor t({kB, kK});
      for (std::size_t i = 0; i < kB; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < kK; ++k) s += (t.at(i, k) = rng.uniform(0.05, 1.0));
        for (std::size_t k = 0; k < kK; ++k) t.at(i, k) /= s;
      }
      p.consts.push_back(t);
      break;
    }
    case 1: case 2: p.params.push_back(rand_tensor({kB, kK}, rng)); break;
    case 3: {
      Tensor t({kB, kK});
      for (auto& v : t.values()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      p.consts.push_back(t);
      break;
    }
    default: break;
  }
  return p;
}

ad::Var run_program(const Program& p, ad::Tape& tape, std::span<const ad::Var> params) {
  std::size_t pi = 1, ci = 0, si = 0;
  ad::Var x = params[0];
  for (int b : p.blocks) {
    switch (b) {
      case 0: x = ad::add(x, params[pi++]); break;
      case 1: x = ad::sub(x, params[pi++]); break;
      case 2: x = ad::mul(x, params[pi++]); break;
      case 3: x = ad::div(x, ad::add_scalar(ad::exp(params[pi++]), 0.5)); break;
      case 4: x = ad::matmul(x, params[pi++]); break;
      case 5: x = ad::relu(ad::add(x, params[pi++])); break;
      case 6: x = ad::exp(ad::scale(x, 0.5)); break;
      case 7: x = ad::log(ad::add_scalar(ad::mul(x, x), 0.5)); break;
      case 8: x = ad::scale(ad::softmax(x, 0.7), 3.0); break;
      case 9: x = ad::log_softmax(x, 1.3); break;
      case 10: x = ad::sigmoid(x); break;
      case 11: x = ad::transpose(ad::mul(ad::transpose(x), params[pi++])); break;
      case 12: x = ad::matmul(tape.constant(p.consts[ci++]), ad::concat_rows(x, params[pi++])); break;
      case 13: {
        ad::Var q = ad::softmax(params[pi++]);
        x = ad::matmul(ad::outer_rows(x, q), params[pi++]);
        break;
      }
      case 14: x = ad::reshape(ad::add(ad::reshape(x, {1, kB * kK}), params[pi++]), {kB, kK}); break;
      case 15: x = ad::add(x, ad::reshape(ad::sum_rows(ad::mul(x, params[pi++])), {kB, 1})); break;
      case 16: x = ad::add(ad::mul(x, ad::stop_gradient(tape.constant(p.consts[ci]))),
                           ad::stop_gradient(tape.constant(p.consts[ci])));
        ++ci;
        break;
      case 17: {
        const double l = p.scalars[si++];
        x = ad::grad_reverse(ad::grad_reverse(x, l), 1.0 / l);
        break;
      }
      case 18: x = ad::scale(x, p.scalars[si++]); break;
      case 19: x = ad::add(x, ad::mean(x)); break;
    }
  }
  switch (p.head) {
    case 0: return ad::mean(ad::cross_entropy(x, p.consts[ci]));
    case 1: return ad::sum(ad::kl_div(ad::softmax(x), ad::softmax(params[pi])));
    case 2: return ad::mean(ad::squared_error(x, params[pi]));
    case 3: return ad::mean(ad::binary_cross_entropy(ad::sigmoid(x), p.consts[ci]));
    default: return ad::scale(ad::sum(ad::sum_rows(ad::mul(x, x))), 0.1);
  }
}

Outcome criterion1(const Context&) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::set<int> blocks_seen, heads_seen;
  double worst = 0.0;
  std::size_t passed = 0, coords = 0;
  std::uint64_t worst_seed = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Program p = make_program(seed, static_cast<int>(seed % kBlockKinds), static_cast<int>(seed % kHeadKinds));
    blocks_seen.insert(p.blocks.begin(), p.blocks.end());
    heads_seen.insert(p.head);
    GradCheckOptions opt;
    opt.step = 1e-5;
    opt.tolerance = 1e-4;
    auto rep = gradient_check(p.params, [&](ad::Tape& tape, std::span<const ad::Var> v) { return run_program(p, tape, v); },
                              opt);
    coords += rep.coords_checked;
    if (rep.passed) ++passed;
    if (rep.max_rel_error > worst) {
      worst = rep.max_rel_error;
      worst_seed = seed;
    }
  }
  const double secs = seconds_since(t0);
  std::string ops;
  for (int b : blocks_seen) ops += std::string(ops.empty() ? "" : ", ") + kBlockNames[b];
  for (int h : heads_seen) ops += std::string(", ") + kHeadNames[h];
  o.note("ops covered: %s", ops.c_str());
  o.note("%zu coordinates checked, worst relative error %.3g (graph %llu)", coords, worst,
         static_cast<unsigned long long>(worst_seed));
  o.expect(blocks_seen.size() == kBlockKinds && heads_seen.size() == kHeadKinds, "every op appears in some graph");
  o.expect(passed == 100, fmt("%.0f/100 graphs within relative error 1e-4", static_cast<double>(passed)));
  o.expect(secs < 60.0, fmt("runtime %.2f s < 60 s", secs));
  return o;
}

// --- criterion 2: bound property suite ---------------------------------------------------

struct Instance {
  FiniteHypothesisClass h;
  LabeledSet s, t;
};

Instance random_instance(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 202));
  const std::size_t dim = 1 + rng.index(2);
  const std::size_t ns = 1 + rng.index(100), nt = 1 + rng.index(100);
  const double shift = rng.uniform(-2.0, 2.0);
  auto draw = [&](std::size_t n, double mu) {
    LabeledSet d{Tensor({n, dim}), std::vector<int>(n)};
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) d.x.at(i, j) = rng.normal(mu, 1.0);
      // Mostly a shared rule with some label noise.
      d.y[i] = (d.x.at(i, 0) > 0.3) != (rng.uniform() < 0.1) ? 1 : 0;
    }
    return d;
  };
  Instance in;
  in.s = draw(ns, 0.0);
  in.t = draw(nt, shift);
  const std::size_t nh = 1 + rng.index(50);
  for (std::size_t k = 0; k < nh; ++k) {
    const std::size_t kind = rng.index(3);
    if (kind == 0) {
      const std::size_t d = rng.index(dim);
      const double thr = rng.normal(0.0, 1.5);
      const bool up = rng.uniform() < 0.5;
      in.h.add("stump" + std::to_string(k), [=](std::span<const double> x) { return (x[d] > thr) == up ? 1 : 0; });
    } else if (kind == 1) {
      std::vector<double> w(dim);
      for (auto& v : w) v = rng.normal();
      const double b = rng.normal();
      in.h.add("linear" + std::to_string(k), [=](std::span<const double> x) {
        double a = b;
        for (std::size_t j = 0; j < w.size(); ++j) a += w[j] * x[j];
        return a > 0 ? 1 : 0;
      });
    } else {
      const int c = rng.uniform() < 0.5 ? 0 : 1;
      in.h.add("const" + std::to_string(k), [=](std::span<const double>) { return c; });
    }
  }
  return in;
}

// Brute force over ordered pairs, evaluating every hypothesis directly.
double brute_force_hdh(const Instance& in) {
  const std::size_t n = in.h.size();
  double best = 0.0;
  const double ns = static_cast<double>(in.s.size()), nt = static_cast<double>(in.t.size());
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b) {
      std::size_t cs = 0, ct = 0;
      for (std::size_t i = 0; i < in.s.size(); ++i)
        cs += in.h.hypotheses[a](in.s.x.row(i)) != in.h.hypotheses[b](in.s.x.row(i));
      for (std::size_t i = 0; i < in.t.size(); ++i)
        ct += in.h.hypotheses[a](in.t.x.row(i)) != in.h.hypotheses[b](in.t.x.row(i));
      best = std::max(best, std::abs(static_cast<double>(cs) / ns - static_cast<double>(ct) / nt));
    }
  return 2.0 * best;
}

Outcome criterion2(const Context&) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t violations = 0, mismatches = 0, reports = 0;
  double tightest = INFINITY;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Instance in = random_instance(seed);
    try {
      auto rep = verify_bound(in.h, in.s, in.t);
      reports += rep.size();
      for (const auto& r : rep) {
        // Independent recheck of each inequality.
        std::size_t wt = 0, ws = 0;
        for (std::size_t i = 0; i < in.t.size(); ++i) wt += in.h.hypotheses[r.hypothesis](in.t.x.row(i)) != in.t.y[i];
        for (std::size_t i = 0; i < in.s.size(); ++i) ws += in.h.hypotheses[r.hypothesis](in.s.x.row(i)) != in.s.y[i];
        const double rt = static_cast<double>(wt) / in.t.size(), rs = static_cast<double>(ws) / in.s.size();
        if (rt != r.target_risk || rs != r.source_risk || rt > rs + 0.5 * r.divergence + r.lambda + 1e-12) ++violations;
        tightest = std::min(tightest, r.rhs - r.target_risk);
      }
    } catch (const BoundViolation& e) {
      ++violations;
      o.note("violation in instance %llu: %s", static_cast<unsigned long long>(seed), e.what());
    }
    if (hdh_divergence(in.h, in.s.x, in.t.x) != brute_force_hdh(in)) ++mismatches;
  }
  const double secs = seconds_since(t0);
  o.note("%zu hypothesis reports over 200 instances; smallest slack rhs - R_t = %.4g", reports, tightest);
  o.expect(violations == 0, fmt("%.0f bound violations", static_cast<double>(violations)));
  o.expect(mismatches == 0, fmt("%.0f divergence mismatches against brute force", static_cast<double>(mismatches)));
  o.expect(secs < 60.0, fmt("runtime %.2f s < 60 s", secs));
  return o;
}

// --- criterion 3: importance weighting consistency -------------------------------------

struct IwCheck {
  std::vector<double> iw, mc, z;
  double mean_weight = 0.0;
};

// Weighted source risk vs Monte Carlo target risk for 20 fixed random linear classifiers.
IwCheck iw_check(std::uint64_t data_seed) {
  const std::size_t n = 10000;
  // Target train is 80% of the draws, giving n target samples.
  DomainDataset ds = gen_support_scenario('a', n, n * 5 / 4, data_seed);
  const auto& oracle = *ds.density_oracle();
  const Tensor& xs = ds.source().x;
  const auto& ys = ds.source().y;
  const Tensor& xt = ds.target_unlabeled();
  const auto& yt = ds.hidden_target_labels(LabelAccess::evaluation());
  std::vector<double> w(n);
  IwCheck out;
  for (std::size_t i = 0; i < n; ++i) out.mean_weight += (w[i] = importance_weight(xs.row(i), oracle)) / n;

  Rng rng(2024);
  for (int c = 0; c < 20; ++c) {
    const double a0 = rng.normal(), a1 = rng.normal(), b = rng.normal(0.0, 0.5);
    auto h = [&](std::span<const double> x) { return a0 * x[0] + a1 * x[1] + b > 0 ? 1 : 0; };
    double sw = 0, sw2 = 0, st = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double l = w[i] * (h(xs.row(i)) != ys[i]);
      sw += l;
      sw2 += l * l;
    }
    for (std::size_t i = 0; i < n; ++i) st += h(xt.row(i)) != yt[i];
    const double iw = sw / n, mc = st / n;
    const double var_iw = sw2 / n - iw * iw, var_mc = mc * (1 - mc);
    const double se = std::sqrt(var_iw / n + var_mc / n);
    out.iw.push_back(iw);
    out.mc.push_back(mc);
    out.z.push_back(se > 0 ? std::abs(iw - mc) / se : 0.0);
  }
  return out;
}

Outcome criterion3(const Context&) {
  Outcome o;
  const IwCheck main = iw_check(31);
  std::size_t within = 0;
  for (std::size_t c = 0; c < main.z.size(); ++c) {
    within += main.z[c] <= 3.0;
    o.note("classifier %2zu: weighted source risk %.4f, target risk %.4f, |diff|/SE %.2f", c, main.iw[c], main.mc[c],
           main.z[c]);
  }
  o.note("mean importance weight over the source sample %.4f (expected 1)", main.mean_weight);
  // Diagnostic only: the same check on independent draws.
  std::size_t clean = 0;
  for (std::uint64_t s = 100; s < 120; ++s) {
    const IwCheck r = iw_check(s);
    clean += std::all_of(r.z.begin(), r.z.end(), [](double z) { return z <= 3.0; });
  }
  o.note("replications: %zu/20 independent data draws have all 20 classifiers within 3 SE", clean);
  o.expect(within == 20, fmt("%.0f/20 classifiers within 3 SE (worst %.2f SE)", static_cast<double>(within),
                             *std::max_element(main.z.begin(), main.z.end())));
  return o;
}

// --- criterion 4: SSL methods vs source only on rotated moons ---------------------------

Outcome criterion4(const Context& ctx) {
  Outcome o;
  auto m = moons_ssl(ctx);
  const auto so = mean_of(m.records, "two_moons", "source_only", "transductive", "accuracy");
  if (!so) {
    o.expect(false, "source_only result present");
    return o;
  }
  o.note("source_only %.4f", *so);
  std::size_t big = 0;
  bool named_ok = true;
  for (const auto& method : kSsl) {
    const auto v = mean_of(m.records, "two_moons", method, "transductive", "accuracy");
    const double acc = v.value_or(0.0);
    const double gain = 100.0 * (acc - *so);
    o.note("%-16s %.4f (%+.1f points)", method.c_str(), acc, gain);
    o.expect(v && gain >= -1.0, method + " >= source_only - 1 point");
    if (gain >= 3.0) ++big;
    if ((method == "fixmatch" || method == "entropy_min" || method == "self_training") && gain < 3.0) named_ok = false;
  }
  o.expect(big >= 5, fmt("%.0f/8 methods gain >= 3 points", static_cast<double>(big)));
  o.expect(named_ok, "fixmatch, entropy_min and self_training each gain >= 3 points");
  o.expect(m.seconds < 600.0, matrix_timing(m) + " < 600 s");
  return o;
}

// --- criterion 5: hybrid ---------------------------------------------------------------

Outcome criterion5(const Context& ctx) {
  Outcome o;
  std::vector<ExperimentRecord> recs = moons_ssl(ctx).records;
  append(recs, moons_rest(ctx).records);
  const auto mcc = mean_of(recs, "two_moons", "mcc", "transductive", "accuracy");
  const auto cons = mean_of(recs, "two_moons", "uda_consistency", "transductive", "accuracy");
  const auto hyb = mean_of(recs, "two_moons", "mcc+uda_consistency", "transductive", "accuracy");
  if (!mcc || !cons || !hyb) {
    o.expect(false, "all three results present");
    return o;
  }
  o.note("mcc %.4f, uda_consistency %.4f, mcc+uda_consistency %.4f", *mcc, *cons, *hyb);
  o.expect(*hyb >= std::max(*mcc, *cons) - 0.005, "hybrid >= max(single methods) - 0.5 points");
  return o;
}

// --- criterion 6: toy SSL-as-UDA ---------------------------------------------------------

// Point where P(class 1 | x) crosses 1/2 on [0, 1], by bisection.
std::optional<double> bisect_boundary(const ModelBundle& model) {
  auto f = [&](double x) { return predict(model, Tensor::matrix(1, 1, {x}))[1] - 0.5; };
  double lo = 0.0, hi = 1.0, flo = f(lo), fhi = f(hi);
  if ((flo > 0) == (fhi > 0)) return std::nullopt;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi), fm = f(mid);
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Outcome criterion6(const Context&) {
  Outcome o;
  ExperimentConfig cfg = matrix_config(toy_task(), {"source_only", "fixmatch", "entropy_min"});
  std::map<std::string, double> mean_acc;
  std::map<std::string, std::vector<std::optional<double>>> bounds;
  for (const auto& method : cfg.methods) {
    for (auto seed : cfg.seeds) {
      DomainDataset ds = cfg.tasks[0].make(seed);
      TrainResult r = train(ds, cfg.train_config(method, cfg.tasks[0], seed));
      mean_acc[method] += evaluate(r.model, ds, Split::transductive).accuracy / cfg.seeds.size();
      bounds[method].push_back(bisect_boundary(r.model));
    }
  }
  for (const auto& method : cfg.methods) {
    std::string b;
    for (const auto& x : bounds[method]) b += x ? fmt(" %.3f", *x) : std::string(" none");
    o.note("%-12s transductive %.4f, boundary per seed:%s", method.c_str(), mean_acc[method], b.c_str());
  }
  bool any = false;
  for (const char* m : {"fixmatch", "entropy_min"}) {
    const bool gap = mean_acc[m] - mean_acc["source_only"] >= 0.05;
    bool near = true;
    for (const auto& x : bounds[m]) near = near && x && std::abs(*x - 0.5) <= 0.1;
    o.note("%s: gap %+.1f points, boundary within 0.1 of 0.5 on all seeds: %s", m,
           100.0 * (mean_acc[m] - mean_acc["source_only"]), near ? "yes" : "no");
    any = any || (gap && near);
  }
  o.expect(any, "fixmatch or entropy_min beats source_only by >= 5 points with its boundary within 0.1 of 0.5");
  return o;
}

// --- criterion 7: proxy A-distance ordering ------------------------------------------------

Outcome criterion7(const Context& ctx) {
  Outcome o;
  std::vector<ExperimentRecord> recs = moons_ssl(ctx).records;
  append(recs, moons_rest(ctx).records);
  auto ad_of = [&](const std::string& m) {
    return mean_of(recs, "two_moons", m, "transductive", "proxy_a_distance");
  };
  const auto so = ad_of("source_only"), dann = ad_of("dann");
  if (!so || !dann) {
    o.expect(false, "proxy A-distance records present");
    return o;
  }
  o.note("source_only %.3f, dann %.3f", *so, *dann);
  std::size_t small = 0;
  for (const auto& m : kSsl) {
    const double v = ad_of(m).value_or(NAN);
    o.note("%-16s %.3f (reduction %+.3f)", m.c_str(), v, *so - v);
    if (*so - v < 0.3) ++small;
  }
  o.expect(*so - *dann >= 0.3, fmt("dann reduces the distance by %.3f (need >= 0.3)", *so - *dann));
  o.expect(small >= 4, fmt("%.0f/8 SSL methods reduce it by < 0.3", static_cast<double>(small)));
  return o;
}

// --- criterion 8: routing ablation ------------------------------------------------------------

Outcome criterion8(const Context& ctx) {
  Outcome o;
  ModelConfig mc;
  mc.input_dim = 2;
  mc.num_classes = 2;
  mc.with_teacher = true;
  ModelBundle model = init_model(mc, 808);
  DomainDataset ds = gen_two_moons_shift({}, 8);
  std::vector<std::size_t> li(32), ui(32);
  for (std::size_t i = 0; i < 32; ++i) li[i] = ui[i] = i;
  const Tensor xl = ds.source().x.gather_rows(li);
  std::vector<int> yl(ds.source().y.begin(), ds.source().y.begin() + 32);
  const Tensor xu = ds.target_unlabeled().gather_rows(ui);

  for (const auto& name : kSsl) {
    SslConfig sc = *MethodSpec::parse(name).ssl;
    sc.vat_epsilon = 0.25;
    // Low enough that masked terms keep some samples on an untrained model.
    sc.confidence_threshold = 0.5;
    auto build = [&](const ModelGraph& g) {
      Rng rng(99);
      if (sc.method == SslMethod::mixmatch) {
        auto parts = mixmatch_parts(g, xl, yl, xu, sc, rng);
        parts.unsupervised.weight = 0.8;
        return std::vector<LossTerm>{parts.supervised, parts.unsupervised};
      }
      auto sup = ad::mean(ad::cross_entropy(g.logits(xl), one_hot(yl, 2)));
      LossTerm reg = ssl_regularizer(g, sc, xu, rng);
      reg.weight = 0.8;
      return std::vector<LossTerm>{{"supervised", sup}, reg};
    };
    auto routed = route_gradients(model, build, Route::feature_extractor_only);
    auto full = route_gradients(model, build, Route::full_model);
    bool g_equal = true, h_changed = false;
    for (std::size_t i = 0; i < 2 * model.g_layer_count(); ++i) g_equal = g_equal && routed[i] == full[i];
    for (std::size_t i = model.h_weight_index(); i <= model.h_bias_index(); ++i) h_changed = h_changed || routed[i] != full[i];
    o.expect(g_equal, name + ": g gradients bitwise equal under both routes");
    o.expect(h_changed, name + ": h gradients differ between routes");
  }

  // Hand-built reference for entropy minimization with h copied in as constants.
  {
    auto routed = route_gradients(
        model,
        [&](const ModelGraph& g) {
          auto sup = ad::mean(ad::cross_entropy(g.logits(xl), one_hot(yl, 2)));
          LossTerm reg = entropy_min(g, xu);
          reg.weight = 0.8;
          return std::vector<LossTerm>{{"supervised", sup}, reg};
        },
        Route::feature_extractor_only);
    ad::Tape tape;
    ModelGraph g(tape, model, Route::full_model);
    auto sup = ad::mean(ad::cross_entropy(g.logits(xl), one_hot(yl, 2)));
    auto z = g.features(g.input(xu));
    auto logits = ad::add(ad::matmul(z, tape.constant(model.params[model.h_weight_index()])),
                          tape.constant(model.params[model.h_bias_index()]));
    auto ent = ad::mean(ad::scale(ad::sum_rows(ad::mul(ad::softmax(logits), ad::log_softmax(logits))), -1.0));
    tape.backward(ad::add(sup, ad::scale(ent, 0.8)));
    auto ref = g.gradients();
    bool eq = true;
    for (std::size_t i = 0; i < model.student_param_count(); ++i) {
      if (i == model.h_weight_index() || i == model.h_bias_index()) continue;
      eq = eq && ref[i] == routed[i];
    }
    o.expect(eq, "entropy_min: routed g gradients equal the hand-built reference bitwise");
  }

  std::vector<ExperimentRecord> recs = moons_ssl(ctx).records;
  append(recs, moons_rest(ctx).records);
  for (const char* m : {"entropy_min", "entropy_min@full"}) {
    const auto acc = mean_of(recs, "two_moons", m, "transductive", "accuracy");
    o.expect(acc && !any_failed(recs, m), std::string("bench recorded ") + m + (acc ? fmt(" (%.4f)", *acc) : ""));
  }
  return o;
}

// --- criterion 9: bracketing ---------------------------------------------------------------

Outcome criterion9(const Context& ctx) {
  Outcome o;
  std::vector<std::pair<std::string, std::vector<ExperimentRecord>>> tasks;
  {
    std::vector<ExperimentRecord> recs = moons_ssl(ctx).records;
    append(recs, moons_rest(ctx).records);
    tasks.emplace_back("two_moons", std::move(recs));
  }
  tasks.emplace_back("toy1d", task_matrix(ctx, toy_task(), false).records);
  for (char k : {'a', 'b', 'c', 'd'}) tasks.emplace_back(std::string("support_") + k, task_matrix(ctx, support_task(k), true).records);

  for (const auto& [task, recs] : tasks) {
    const auto so = mean_of(recs, task, "source_only", "inductive", "accuracy");
    const auto orc = mean_of(recs, task, "oracle", "inductive", "accuracy");
    if (!so || !orc) {
      o.expect(false, task + ": baselines present");
      continue;
    }
    std::set<std::string> methods;
    for (const auto& r : recs)
      if (r.task == task && r.method != "source_only" && r.method != "oracle") methods.insert(r.method);
    std::string low, high;
    std::size_t ok = 0;
    for (const auto& m : methods) {
      const double v = mean_of(recs, task, m, "inductive", "accuracy").value_or(NAN);
      const bool above = v + 0.01 >= *so, below = v <= *orc + 0.01;
      if (!above) low += " " + m + fmt("=%.3f", v);
      if (!below) high += " " + m + fmt("=%.3f", v);
      ok += above && below;
    }
    o.note("%-10s source_only %.3f, oracle %.3f; %zu/%zu methods bracketed", task.c_str(), *so, *orc, ok,
           methods.size());
    if (!low.empty()) o.note("           below source_only - 1 point:%s", low.c_str());
    if (!high.empty()) o.note("           above oracle + 1 point:%s", high.c_str());
    o.expect(ok == methods.size(), task + ": every method within [source_only - 1, oracle + 1] points");
  }
  return o;
}

// --- criterion 10: CLI determinism ---------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion10(const Context& ctx) {
  Outcome o;
  if (ctx.cli.empty()) {
    o.expect(false, "--cli path given");
    return o;
  }
  const fs::path dir = fs::temp_directory_path() / "shiftbench_acceptance_c10";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "bench.cfg") << "[task]\n"
                                      "generator = two_moons\n"
                                      "n_src = 100\n"
                                      "n_tgt = 100\n"
                                      "[task]\n"
                                      "generator = toy1d\n"
                                      "n_target = 200\n"
                                      "[methods]\n"
                                      "methods = source_only, fixmatch, dann, mcc+uda_consistency\n"
                                      "seeds = 0, 1\n"
                                      "[train]\n"
                                      "steps = 300\n"
                                      "eval_every = 50\n";
  auto run = [&](const std::string& out, int jobs) {
    const std::string cmd = "\"" + ctx.cli + "\" bench --config \"" + (dir / "bench.cfg").string() + "\" --out \"" +
                            (dir / out).string() + "\" --jobs " + std::to_string(jobs) + " > \"" +
                            (dir / (out + ".log")).string() + "\" 2>&1";
    return std::system(cmd.c_str());
  };
  const int r1 = run("run1", 1), r2 = run("run2", 1), r3 = run("run3", 3);
  o.expect(r1 == 0 && r2 == 0 && r3 == 0, "three bench invocations exit 0");
  const std::string a = slurp(dir / "run1" / "results.csv"), b = slurp(dir / "run2" / "results.csv"),
                    c = slurp(dir / "run3" / "results.csv");
  o.note("results.csv: %zu bytes", a.size());
  o.expect(!a.empty() && a == b, "identical config rerun gives a byte-identical CSV");
  o.expect(!a.empty() && a == c, "--jobs 1 and --jobs 3 give identical CSVs");
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  Context ctx;
  ctx.cache = fs::temp_directory_path() / "shiftbench_acceptance_cache";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--criterion" && i + 1 < argc) only = std::atoi(argv[++i]);
    else if (a == "--cache" && i + 1 < argc) ctx.cache = argv[++i];
    else if (a == "--cli" && i + 1 < argc) ctx.cli = argv[++i];
    else {
      std::fprintf(stderr, "usage: %s [--criterion N] [--cache DIR] [--cli PATH]\n", argv[0]);
      return 2;
    }
  }
  const std::vector<std::pair<const char*, std::function<Outcome(const Context&)>>> criteria{
      {"gradient correctness on 100 random graphs", criterion1},
      {"bound property suite on 200 random instances", criterion2},
      {"importance-weighted risk matches target risk", criterion3},
      {"SSL methods vs source_only on two-moons 30 deg", criterion4},
      {"mcc + consistency hybrid", criterion5},
      {"toy1d SSL-as-UDA", criterion6},
      {"proxy A-distance ordering", criterion7},
      {"routing ablation", criterion8},
      {"source_only / oracle bracketing on every task", criterion9},
      {"bench determinism across reruns and --jobs", criterion10},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (only != 0 && only != n) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second(ctx);
    } catch (const std::exception& e) {
      o.expect(false, std::string("threw: ") + e.what());
    }
    std::printf("%s criterion %d: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, seconds_since(t0));
    for (const auto& line : o.lines) std::printf("    %s\n", line.c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
