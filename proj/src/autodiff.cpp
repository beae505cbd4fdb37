#include "subcon/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace subcon {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows) + " x " + std::to_string(cols));
  }
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) throw ShapeError("item() needs a 1 x 1 tensor");
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

Tensor SparseMatrix::to_dense() const {
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (auto k = offsets[r]; k < offsets[r + 1]; ++k) out(r, indices[k]) += values[k];
  }
  return out;
}

NonFiniteError::NonFiniteError(const std::string& op, std::size_t node)
    : std::runtime_error("non-finite value produced by " + op + " (node " +
                         std::to_string(node) + ")"),
      node_(node) {}

const Tensor& Var::value() const { return tape->value(*this); }

// ---------------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  Node n;
  n.name = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Tensor value, std::string name) {
  Node n;
  n.name = name.empty() ? "param" + std::to_string(params_.size()) : std::move(name);
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  Var v{this, nodes_.size() - 1};
  params_.push_back(v);
  return v;
}

Var Tape::record(std::string op, Tensor value, std::initializer_list<Var> inputs,
                 BackwardFn fn) {
  return record(std::move(op), std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(std::string op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  const std::size_t id = nodes_.size();
  if (!value.all_finite()) throw NonFiniteError(op, id);
  Node n;
  n.name = std::move(op);
  n.value = std::move(value);
  for (auto in : inputs) {
    if (in.tape != this) throw std::invalid_argument("op input recorded on another tape");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, id};
}

Tensor& Tape::grad_buffer(Var v) {
  auto& n = nodes_[v.id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  if (!nodes_[v.id].requires_grad) return;
  auto& buf = grad_buffer(v);
  if (!buf.same_shape(g)) throw ShapeError("gradient shape mismatch in " + nodes_[v.id].name);
  auto dst = buf.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("loss recorded on another tape");
  const auto& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw ShapeError("backward needs a scalar loss");
  if (backward_done_) throw std::logic_error("backward already ran on this tape");
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
}

Tensor Tape::grad(Var v) const {
  const auto& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  return Tensor(n.value.rows(), n.value.cols());
}

// ---------------------------------------------------------------------------

double log_sum_exp(std::span<const double> x) {
  if (x.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(x.begin(), x.end());
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

namespace ad {

namespace {

void require(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw ShapeError(std::string(op) + ": " + detail);
}

std::string dims(const Tensor& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

// c += a * b (or with transposes), plain loops in cache-friendly order.
void gemm_nn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (av == 0.0) continue;
      const double* brow = &b(p, 0);
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a^T * b
void gemm_tn(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t p = 0; p < n; ++p) {
    const double* brow = &b(p, 0);
    for (std::size_t i = 0; i < k; ++i) {
      const double av = a(p, i);
      if (av == 0.0) continue;
      double* crow = &c(i, 0);
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

// c += a * b^T
void gemm_nt(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = &a(i, 0);
    for (std::size_t j = 0; j < m; ++j) {
      const double* brow = &b(j, 0);
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c(i, j) += acc;
    }
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.cols() == bv.rows(), "matmul", dims(av) + " * " + dims(bv));
  Tensor out(av.rows(), bv.cols());
  gemm_nn(av, bv, out);
  return a.tape->record("matmul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) gemm_nt(g, b.value(), t.grad_buffer(a));
    if (t.requires_grad(b)) gemm_tn(a.value(), g, t.grad_buffer(b));
  });
}

Var spmm(const SparseMatrix& a, Var b) {
  const auto& bv = b.value();
  require(a.cols == bv.rows(), "spmm",
          std::to_string(a.rows) + "x" + std::to_string(a.cols) + " * " + dims(bv));
  const std::size_t m = bv.cols();
  Tensor out(a.rows, m);
  for (std::size_t r = 0; r < a.rows; ++r) {
    for (auto k = a.offsets[r]; k < a.offsets[r + 1]; ++k) {
      const double w = a.values[k];
      const double* src = &bv(a.indices[k], 0);
      double* dst = &out(r, 0);
      for (std::size_t j = 0; j < m; ++j) dst[j] += w * src[j];
    }
  }
  // The sparse operand is copied into the closure; callers may drop theirs.
  return b.tape->record("spmm", std::move(out), {b}, [a, b](Tape& t, const Tensor& g) {
    auto& gb = t.grad_buffer(b);
    const std::size_t m = g.cols();
    for (std::size_t r = 0; r < a.rows; ++r) {
      const double* src = &g(r, 0);
      for (auto k = a.offsets[r]; k < a.offsets[r + 1]; ++k) {
        const double w = a.values[k];
        double* dst = &gb(a.indices[k], 0);
        for (std::size_t j = 0; j < m; ++j) dst[j] += w * src[j];
      }
    }
  });
}

Var add(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.same_shape(bv), "add", dims(av) + " + " + dims(bv));
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require(av.same_shape(bv), "sub", dims(av) + " - " + dims(bv));
  Tensor out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& x : out.data()) x *= s;
  return a.tape->record("scale", std::move(out), {a}, [a, s](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var prelu(Var x, Var slope) {
  const auto& xv = x.value();
  require(slope.rows() == 1 && slope.cols() == 1, "prelu", "slope must be 1x1");
  const double a = slope.value()[0];
  Tensor out = xv;
  for (auto& v : out.data()) {
    if (v < 0.0) v *= a;
  }
  return x.tape->record("prelu", std::move(out), {x, slope}, [x, slope](Tape& t, const Tensor& g) {
    const auto& xv = x.value();
    const double a = slope.value()[0];
    if (t.requires_grad(x)) {
      auto& gx = t.grad_buffer(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] < 0.0 ? a * g[i] : g[i];
    }
    if (t.requires_grad(slope)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xv[i] < 0.0) acc += xv[i] * g[i];
      }
      t.grad_buffer(slope)[0] += acc;
    }
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& v : out.data()) {
    v = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  const std::size_t self = x.tape->size();
  return x.tape->record("sigmoid", std::move(out), {x}, [x, self](Tape& t, const Tensor& g) {
    const auto& y = t.value(Var{&t, self});
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var l2_normalize_rows(Var x) {
  const auto& xv = x.value();
  Tensor out = xv;
  std::vector<double> norms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double ss = 0.0;
    for (double v : xv.row(r)) ss += v * v;
    norms[r] = std::sqrt(ss);
    if (norms[r] == 0.0) throw NonFiniteError("l2_normalize_rows (zero row)", x.tape->size());
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) /= norms[r];
  }
  const std::size_t self = x.tape->size();
  return x.tape->record("l2_normalize_rows", std::move(out), {x},
                        [x, self, norms = std::move(norms)](Tape& t, const Tensor& g) {
                          // d/dx (x/|x|) = (I - y y^T) / |x|
                          const auto& y = t.value(Var{&t, self});
                          auto& gx = t.grad_buffer(x);
                          for (std::size_t r = 0; r < y.rows(); ++r) {
                            double dot = 0.0;
                            for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
                            for (std::size_t c = 0; c < y.cols(); ++c) {
                              gx(r, c) += (g(r, c) - dot * y(r, c)) / norms[r];
                            }
                          }
                        });
}

Var row_weighted_sum(Var weights, Var matrix) {
  const auto& w = weights.value();
  const auto& m = matrix.value();
  require(w.rows() == 1 && w.cols() == m.rows(), "row_weighted_sum",
          "weights " + dims(w) + " vs matrix " + dims(m));
  Tensor out(1, m.cols());
  gemm_nn(w, m, out);
  return weights.tape->record("row_weighted_sum", std::move(out), {weights, matrix},
                              [weights, matrix](Tape& t, const Tensor& g) {
                                if (t.requires_grad(weights)) {
                                  gemm_nt(g, matrix.value(), t.grad_buffer(weights));
                                }
                                if (t.requires_grad(matrix)) {
                                  gemm_tn(weights.value(), g, t.grad_buffer(matrix));
                                }
                              });
}

Var dot_products_matrix(Var h) {
  const auto& hv = h.value();
  const std::size_t n = hv.rows();
  Tensor out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ri = hv.row(i);
    for (std::size_t j = i; j < n; ++j) {
      const auto rj = hv.row(j);
      double acc = 0.0;
      for (std::size_t c = 0; c < hv.cols(); ++c) acc += ri[c] * rj[c];
      out(i, j) = acc;
      out(j, i) = acc;
    }
  }
  return h.tape->record("dot_products_matrix", std::move(out), {h}, [h](Tape& t, const Tensor& g) {
    // d(HH^T) -> (G + G^T) H
    const std::size_t n = g.rows();
    Tensor sym(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) sym(i, j) = g(i, j) + g(j, i);
    }
    gemm_nn(sym, h.value(), t.grad_buffer(h));
  });
}

Var masked_log_sum_exp(Var x, const Tensor& mask) {
  const auto& xv = x.value();
  require(xv.same_shape(mask), "masked_log_sum_exp", dims(xv) + " vs mask " + dims(mask));
  const std::size_t n = xv.rows(), m = xv.cols();
  Tensor out(n, 1);
  Tensor softmax(n, m);
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < m; ++c) {
      if (mask(r, c) != 0.0) mx = std::max(mx, xv(r, c));
    }
    if (!std::isfinite(mx)) throw ShapeError("masked_log_sum_exp: row with no unmasked entry");
    double acc = 0.0;
    for (std::size_t c = 0; c < m; ++c) {
      if (mask(r, c) != 0.0) {
        softmax(r, c) = std::exp(xv(r, c) - mx);
        acc += softmax(r, c);
      }
    }
    for (std::size_t c = 0; c < m; ++c) softmax(r, c) /= acc;
    out(r, 0) = mx + std::log(acc);
  }
  return x.tape->record("masked_log_sum_exp", std::move(out), {x},
                        [x, softmax = std::move(softmax)](Tape& t, const Tensor& g) {
                          auto& gx = t.grad_buffer(x);
                          for (std::size_t r = 0; r < softmax.rows(); ++r) {
                            for (std::size_t c = 0; c < softmax.cols(); ++c) {
                              gx(r, c) += g(r, 0) * softmax(r, c);
                            }
                          }
                        });
}

Var weighted_sum(Var x, const Tensor& weights) {
  const auto& xv = x.value();
  require(xv.same_shape(weights), "weighted_sum", dims(xv) + " vs " + dims(weights));
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += weights[i] * xv[i];
  return x.tape->record("weighted_sum", Tensor::scalar(acc), {x},
                        [x, weights](Tape& t, const Tensor& g) {
                          auto& gx = t.grad_buffer(x);
                          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * weights[i];
                        });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  return x.tape->record("sum", Tensor::scalar(acc), {x}, [x](Tape& t, const Tensor& g) {
    auto& gx = t.grad_buffer(x);
    for (auto& v : gx.data()) v += g[0];
  });
}

Var add_row_broadcast(Var x, Var bias) {
  const auto& xv = x.value();
  const auto& bv = bias.value();
  require(bv.rows() == 1 && bv.cols() == xv.cols(), "add_row_broadcast",
          dims(xv) + " + " + dims(bv));
  Tensor out = xv;
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < xv.cols(); ++c) out(r, c) += bv[c];
  }
  return x.tape->record("add_row_broadcast", std::move(out), {x, bias},
                        [x, bias](Tape& t, const Tensor& g) {
                          t.accumulate(x, g);
                          if (t.requires_grad(bias)) {
                            auto& gb = t.grad_buffer(bias);
                            for (std::size_t r = 0; r < g.rows(); ++r) {
                              for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
                            }
                          }
                        });
}

Var select_rows(Var x, std::span<const std::size_t> rows) {
  const auto& xv = x.value();
  Tensor out(rows.size(), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < xv.rows(), "select_rows", "row index out of range");
    const auto src = xv.row(rows[i]);
    std::copy(src.begin(), src.end(), &out(i, 0));
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return x.tape->record("select_rows", std::move(out), {x},
                        [x, idx = std::move(idx)](Tape& t, const Tensor& g) {
                          auto& gx = t.grad_buffer(x);
                          for (std::size_t i = 0; i < idx.size(); ++i) {
                            for (std::size_t c = 0; c < g.cols(); ++c) gx(idx[i], c) += g(i, c);
                          }
                        });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (auto p : parts) {
    require(p.cols() == cols, "concat_rows", "column counts differ");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::size_t r0 = 0;
  for (auto p : parts) {
    const auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(r0 * cols));
    r0 += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  Tape* tape = parts.front().tape;
  return tape->record("concat_rows", std::move(out), parts,
                      [inputs](Tape& t, const Tensor& g) {
                        std::size_t r0 = 0;
                        for (auto p : inputs) {
                          const std::size_t n = p.rows() * g.cols();
                          if (t.requires_grad(p)) {
                            auto& gp = t.grad_buffer(p);
                            for (std::size_t i = 0; i < n; ++i) gp[i] += g[r0 * g.cols() + i];
                          }
                          r0 += p.rows();
                        }
                      });
}

}  // namespace ad
}  // namespace subcon
