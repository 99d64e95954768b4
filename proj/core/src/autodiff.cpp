#include "shiftbench/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "shiftbench/error.hpp"

namespace shiftbench::ad {

const Tensor& Var::value() const { return tape_->value(id_); }
Tensor Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(Tensor value) { return record(std::move(value), true, nullptr); }

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), requires_grad, {}, requires_grad ? std::move(backward) : nullptr});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Tensor Tape::grad(std::uint32_t id) const {
  const Node& n = nodes_[id];
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return Tensor(n.value.shape(), n.grad);
}

void Tape::accumulate(Var target, const Tensor& grad) {
  accumulate_with(target, [&](std::vector<double>& buf) {
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += grad[i];
  });
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw Error("backward: loss belongs to a different tape");
  const Node& root = nodes_[loss.id()];
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " + shape_string(root.value.shape()));
  }
  visits_ = 0;
  if (!root.requires_grad) return;
  accumulate_with(loss, [](std::vector<double>& buf) { buf[0] += 1.0; });
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    // Copy: the rule may accumulate into other nodes, but never into itself.
    const Tensor out_grad(n.value.shape(), n.grad);
    ++visits_;
    n.backward(*this, out_grad);
  }
}

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " + shape_string(b));
}

Tape& same_tape(const char* op, Var a, Var b) {
  if (!a.valid() || !b.valid() || a.tape() != b.tape()) throw Error(std::string(op) + ": operands on different tapes");
  return *a.tape();
}

enum class Bcast { same, scalar, row, col };

Bcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::same;
  const std::size_t bn = shape_size(b);
  if (bn == 1) return Bcast::scalar;
  if (a.size() == 2) {
    const std::size_t m = a[0], n = a[1];
    const bool b_row = (b.size() == 1 && b[0] == n) || (b.size() == 2 && b[0] == 1 && b[1] == n);
    if (b_row) return Bcast::row;
    const bool b_col = (b.size() == 1 && b[0] == m) || (b.size() == 2 && b[0] == m && b[1] == 1);
    if (b_col) return Bcast::col;
  }
  shape_fail(op, a, b);
}

inline std::size_t b_index(Bcast kind, std::size_t i, std::size_t cols) {
  switch (kind) {
    case Bcast::same: return i;
    case Bcast::scalar: return 0;
    case Bcast::row: return i % cols;
    case Bcast::col: return i / cols;
  }
  return i;
}

bool any_grad(Var a, Var b) { return a.requires_grad() || b.requires_grad(); }

// Shared driver for broadcasting binary ops. `f` computes the value; `da` and
// `db` return the local partial derivatives at (x, y).
template <class F, class DA, class DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  Tape& tape = same_tape(op, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Bcast kind = broadcast_kind(op, av.shape(), bv.shape());
  const std::size_t cols = av.cols();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[b_index(kind, i, cols)]);
  return tape.record(std::move(out), any_grad(a, b), [a, b, kind, cols, da, db](Tape& t, const Tensor& g) {
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (a.requires_grad()) {
      t.accumulate_with(a, [&](std::vector<double>& buf) {
        for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * da(x[i], y[b_index(kind, i, cols)]);
      });
    }
    if (b.requires_grad()) {
      t.accumulate_with(b, [&](std::vector<double>& buf) {
        for (std::size_t i = 0; i < g.size(); ++i) {
          const std::size_t j = b_index(kind, i, cols);
          buf[j] += g[i] * db(x[i], y[j]);
        }
      });
    }
  });
}

template <class F, class D>
Var unary(Var x, F f, D d) {
  Tape& tape = *x.tape();
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return tape.record(std::move(out), x.requires_grad(), [x, d](Tape& t, const Tensor& g) {
    const Tensor& xv = x.value();
    t.accumulate_with(x, [&](std::vector<double>& buf) {
      for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * d(xv[i]);
    });
  });
}

double clamp_prob(double p) { return p > kProbEpsilon ? p : kProbEpsilon; }

void require_matrix(const char* op, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_string(t.shape()));
}

// Treats rank-1 (B) as (B, 1) for rowwise ops.
std::size_t rows_of(const Tensor& t) { return t.rank() == 0 ? 1 : t.shape()[0]; }
std::size_t cols_of(const Tensor& t) { return t.rank() == 2 ? t.shape()[1] : 1; }

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var scale(Var x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double) { return c; });
}

Var add_scalar(Var x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

Var relu(Var x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var log(Var x) {
  return unary(
      x, [](double v) { return std::log(clamp_prob(v)); }, [](double v) { return v > kProbEpsilon ? 1.0 / v : 0.0; });
}

Var sigmoid(Var x) {
  auto s = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(x, s, [s](double v) {
    const double y = s(v);
    return y * (1.0 - y);
  });
}

Var matmul(Var a, Var b) {
  Tape& tape = same_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("matmul", av);
  require_matrix("matmul", bv);
  const std::size_t m = av.shape()[0], k = av.shape()[1], n = bv.shape()[1];
  if (bv.shape()[0] != k) shape_fail("matmul", av.shape(), bv.shape());
  Tensor out(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* o = &out.at(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double s = av[i * k + p];
      if (s == 0.0) continue;
      const double* brow = &bv.values()[p * n];
      for (std::size_t j = 0; j < n; ++j) o[j] += s * brow[j];
    }
  }
  return tape.record(std::move(out), any_grad(a, b), [a, b, m, k, n](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (a.requires_grad()) {
      // dA = G B^T
      // Through B^T so the inner loop is a contiguous axpy.
      std::vector<double> bt(k * n);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bv[p * n + j];
      t.accumulate_with(a, [&](std::vector<double>& buf) {
        for (std::size_t i = 0; i < m; ++i) {
          double* dst = &buf[i * k];
          for (std::size_t j = 0; j < n; ++j) {
            const double s = g[i * n + j];
            if (s == 0.0) continue;
            const double* src = &bt[j * k];
            for (std::size_t p = 0; p < k; ++p) dst[p] += s * src[p];
          }
        }
      });
    }
    if (b.requires_grad()) {
      // dB = A^T G
      t.accumulate_with(b, [&](std::vector<double>& buf) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            const double s = av[i * k + p];
            if (s == 0.0) continue;
            for (std::size_t j = 0; j < n; ++j) buf[p * n + j] += s * g[i * n + j];
          }
        }
      });
    }
  });
}

Var transpose(Var x) {
  const Tensor& xv = x.value();
  require_matrix("transpose", xv);
  const std::size_t m = xv.shape()[0], n = xv.shape()[1];
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = xv.at(i, j);
  return x.tape()->record(std::move(out), x.requires_grad(), [x, m, n](Tape& t, const Tensor& g) {
    t.accumulate_with(x, [&](std::vector<double>& buf) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) buf[i * n + j] += g[j * m + i];
    });
  });
}

Var outer_rows(Var z, Var p) {
  Tape& tape = same_tape("outer_rows", z, p);
  const Tensor& zv = z.value();
  const Tensor& pv = p.value();
  require_matrix("outer_rows", zv);
  require_matrix("outer_rows", pv);
  const std::size_t batch = zv.shape()[0], f = zv.shape()[1], k = pv.shape()[1];
  if (pv.shape()[0] != batch) shape_fail("outer_rows", zv.shape(), pv.shape());
  Tensor out(Shape{batch, f * k});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < f; ++i)
      for (std::size_t j = 0; j < k; ++j) out.at(b, i * k + j) = zv.at(b, i) * pv.at(b, j);
  return tape.record(std::move(out), any_grad(z, p), [z, p, batch, f, k](Tape& t, const Tensor& g) {
    const Tensor& zv = z.value();
    const Tensor& pv = p.value();
    const std::size_t w = f * k;
    if (z.requires_grad()) {
      t.accumulate_with(z, [&](std::vector<double>& buf) {
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < f; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) acc += g[b * w + i * k + j] * pv[b * k + j];
            buf[b * f + i] += acc;
          }
      });
    }
    if (p.requires_grad()) {
      t.accumulate_with(p, [&](std::vector<double>& buf) {
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t j = 0; j < k; ++j) {
            double acc = 0.0;
            for (std::size_t i = 0; i < f; ++i) acc += g[b * w + i * k + j] * zv[b * f + i];
            buf[b * k + j] += acc;
          }
      });
    }
  });
}

Var concat_rows(Var a, Var b) {
  Tape& tape = same_tape("concat_rows", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() == 0 || av.rank() != bv.rank() || (av.rank() == 2 && av.shape()[1] != bv.shape()[1])) {
    shape_fail("concat_rows", av.shape(), bv.shape());
  }
  Shape shape = av.shape();
  shape[0] += bv.shape()[0];
  std::vector<double> values(av.values().begin(), av.values().end());
  values.insert(values.end(), bv.values().begin(), bv.values().end());
  const std::size_t split = av.size();
  return tape.record(Tensor(std::move(shape), std::move(values)), any_grad(a, b),
                     [a, b, split](Tape& t, const Tensor& g) {
                       t.accumulate_with(a, [&](std::vector<double>& buf) {
                         for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
                       });
                       t.accumulate_with(b, [&](std::vector<double>& buf) {
                         for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[split + i];
                       });
                     });
}

Var reshape(Var x, Shape shape) {
  if (shape_size(shape) != x.value().size()) shape_fail("reshape", x.shape(), shape);
  Tensor out(std::move(shape), std::vector<double>(x.value().values().begin(), x.value().values().end()));
  return x.tape()->record(std::move(out), x.requires_grad(), [x](Tape& t, const Tensor& g) {
    t.accumulate_with(x, [&](std::vector<double>& buf) {
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
    });
  });
}

Var sum(Var x) {
  const Tensor& xv = x.value();
  double s = 0.0;
  for (double v : xv.values()) s += v;
  return x.tape()->record(Tensor::scalar(s), x.requires_grad(), [x](Tape& t, const Tensor& g) {
    const double gv = g[0];
    t.accumulate_with(x, [&](std::vector<double>& buf) {
      for (double& v : buf) v += gv;
    });
  });
}

Var mean(Var x) {
  const Tensor& xv = x.value();
  if (xv.size() == 0) throw ShapeError("mean of an empty tensor");
  double s = 0.0;
  for (double v : xv.values()) s += v;
  const double n = static_cast<double>(xv.size());
  return x.tape()->record(Tensor::scalar(s / n), x.requires_grad(), [x, n](Tape& t, const Tensor& g) {
    const double gv = g[0] / n;
    t.accumulate_with(x, [&](std::vector<double>& buf) {
      for (double& v : buf) v += gv;
    });
  });
}

Var sum_rows(Var x) {
  const Tensor& xv = x.value();
  require_matrix("sum_rows", xv);
  const std::size_t m = xv.shape()[0], n = xv.shape()[1];
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += xv.at(i, j);
    out[i] = s;
  }
  return x.tape()->record(std::move(out), x.requires_grad(), [x, m, n](Tape& t, const Tensor& g) {
    t.accumulate_with(x, [&](std::vector<double>& buf) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) buf[i * n + j] += g[i];
    });
  });
}

Tensor softmax_values(const Tensor& logits, double temperature) {
  if (!(temperature > 0.0)) throw Error("softmax: temperature must be positive");
  const std::size_t m = rows_of(logits), n = cols_of(logits);
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = &logits.values()[i * n];
    double mx = x[0] / temperature;
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j] / temperature);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(x[j] / temperature - mx);
      out[i * n + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] /= z;
  }
  return out;
}

Var softmax(Var x, double temperature) {
  const Tensor& xv = x.value();
  require_matrix("softmax", xv);
  Tensor out = softmax_values(xv, temperature);
  const std::size_t m = xv.shape()[0], n = xv.shape()[1];
  // Output value is captured by id through the tape, so the rule can read it back.
  Tape& tape = *x.tape();
  const auto out_id = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), x.requires_grad(), [x, m, n, temperature, out_id](Tape& t, const Tensor& g) {
    const Tensor& s = t.value(out_id);
    t.accumulate_with(x, [&](std::vector<double>& buf) {
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * s[i * n + j];
        for (std::size_t j = 0; j < n; ++j) buf[i * n + j] += s[i * n + j] * (g[i * n + j] - dot) / temperature;
      }
    });
  });
}

Var log_softmax(Var x, double temperature) {
  const Tensor& xv = x.value();
  require_matrix("log_softmax", xv);
  Tensor s = softmax_values(xv, temperature);
  const std::size_t m = xv.shape()[0], n = xv.shape()[1];
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < m; ++i) {
    double mx = xv.at(i, 0) / temperature;
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv.at(i, j) / temperature);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xv.at(i, j) / temperature - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = xv.at(i, j) / temperature - lse;
  }
  return x.tape()->record(std::move(out), x.requires_grad(),
                          [x, m, n, temperature, s = std::move(s)](Tape& t, const Tensor& g) {
                            t.accumulate_with(x, [&](std::vector<double>& buf) {
                              for (std::size_t i = 0; i < m; ++i) {
                                double gs = 0.0;
                                for (std::size_t j = 0; j < n; ++j) gs += g[i * n + j];
                                for (std::size_t j = 0; j < n; ++j)
                                  buf[i * n + j] += (g[i * n + j] - s[i * n + j] * gs) / temperature;
                              }
                            });
                          });
}

Var cross_entropy(Var logits, const Tensor& targets) {
  const Tensor& xv = logits.value();
  require_matrix("cross_entropy", xv);
  if (targets.shape() != xv.shape()) shape_fail("cross_entropy", xv.shape(), targets.shape());
  const std::size_t m = xv.shape()[0], n = xv.shape()[1];
  Tensor s = softmax_values(xv);
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    double mx = xv.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xv.at(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(xv.at(i, j) - mx);
    const double lse = mx + std::log(z);
    double ce = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double tj = targets.at(i, j);
      if (tj != 0.0) ce -= tj * (xv.at(i, j) - lse);
    }
    out[i] = ce;
  }
  return logits.tape()->record(std::move(out), logits.requires_grad(),
                               [logits, m, n, s = std::move(s), targets](Tape& t, const Tensor& g) {
                                 t.accumulate_with(logits, [&](std::vector<double>& buf) {
                                   for (std::size_t i = 0; i < m; ++i) {
                                     double tsum = 0.0;
                                     for (std::size_t j = 0; j < n; ++j) tsum += targets.at(i, j);
                                     for (std::size_t j = 0; j < n; ++j)
                                       buf[i * n + j] += g[i] * (s.at(i, j) * tsum - targets.at(i, j));
                                   }
                                 });
                               });
}

Var kl_div(Var p, Var q) {
  Tape& tape = same_tape("kl_div", p, q);
  const Tensor& pv = p.value();
  const Tensor& qv = q.value();
  require_matrix("kl_div", pv);
  if (pv.shape() != qv.shape()) shape_fail("kl_div", pv.shape(), qv.shape());
  const std::size_t m = pv.shape()[0], n = pv.shape()[1];
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double a = pv.at(i, j);
      if (a == 0.0) continue;
      s += a * (std::log(clamp_prob(a)) - std::log(clamp_prob(qv.at(i, j))));
    }
    out[i] = s;
  }
  return tape.record(std::move(out), any_grad(p, q), [p, q, m, n](Tape& t, const Tensor& g) {
    const Tensor& pv = p.value();
    const Tensor& qv = q.value();
    if (p.requires_grad()) {
      t.accumulate_with(p, [&](std::vector<double>& buf) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double a = pv.at(i, j);
            const double dlog = a > kProbEpsilon ? 1.0 : 0.0;
            buf[i * n + j] += g[i] * (std::log(clamp_prob(a)) + dlog - std::log(clamp_prob(qv.at(i, j))));
          }
      });
    }
    if (q.requires_grad()) {
      t.accumulate_with(q, [&](std::vector<double>& buf) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double b = qv.at(i, j);
            if (b > kProbEpsilon) buf[i * n + j] -= g[i] * pv.at(i, j) / b;
          }
      });
    }
  });
}

Var squared_error(Var a, Var b) {
  Tape& tape = same_tape("squared_error", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix("squared_error", av);
  if (av.shape() != bv.shape()) shape_fail("squared_error", av.shape(), bv.shape());
  const std::size_t m = av.shape()[0], n = av.shape()[1];
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = av.at(i, j) - bv.at(i, j);
      s += d * d;
    }
    out[i] = s;
  }
  return tape.record(std::move(out), any_grad(a, b), [a, b, m, n](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (a.requires_grad()) {
      t.accumulate_with(a, [&](std::vector<double>& buf) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) buf[i * n + j] += 2.0 * g[i] * (av.at(i, j) - bv.at(i, j));
      });
    }
    if (b.requires_grad()) {
      t.accumulate_with(b, [&](std::vector<double>& buf) {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) buf[i * n + j] -= 2.0 * g[i] * (av.at(i, j) - bv.at(i, j));
      });
    }
  });
}

Var binary_cross_entropy(Var prob, const Tensor& targets) {
  const Tensor& pv = prob.value();
  if (pv.size() != targets.size()) shape_fail("binary_cross_entropy", pv.shape(), targets.shape());
  Tensor out(pv.shape());
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double p = pv[i], y = targets[i];
    out[i] = -(y * std::log(clamp_prob(p)) + (1.0 - y) * std::log(clamp_prob(1.0 - p)));
  }
  return prob.tape()->record(std::move(out), prob.requires_grad(), [prob, targets](Tape& t, const Tensor& g) {
    const Tensor& pv = prob.value();
    t.accumulate_with(prob, [&](std::vector<double>& buf) {
      for (std::size_t i = 0; i < buf.size(); ++i) {
        const double p = pv[i], y = targets[i];
        double d = 0.0;
        if (p > kProbEpsilon) d -= y / p;
        if (1.0 - p > kProbEpsilon) d += (1.0 - y) / (1.0 - p);
        buf[i] += g[i] * d;
      }
    });
  });
}

Var stop_gradient(Var x) { return x.tape()->record(x.value(), false, nullptr); }

Var grad_reverse(Var x, double lambda) {
  return x.tape()->record(x.value(), x.requires_grad(), [x, lambda](Tape& t, const Tensor& g) {
    t.accumulate_with(x, [&](std::vector<double>& buf) {
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i] * -lambda;
    });
  });
}

}  // namespace shiftbench::ad
