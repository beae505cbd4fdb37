#ifndef SUBCON_AUTODIFF_HPP
#define SUBCON_AUTODIFF_HPP

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace subcon {

/// Dense row-major f64 matrix. Vectors are 1 x n rows, scalars 1 x 1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);
  Tensor(std::size_t rows, std::size_t cols, std::initializer_list<double> data)
      : Tensor(rows, cols, std::vector<double>(data)) {}

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  const double& operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  /// Value of a 1 x 1 tensor.
  double item() const;
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Constant CSR matrix used as the left operand of spmm.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> offsets;  // rows + 1
  std::vector<std::size_t> indices;
  std::vector<double> values;

  Tensor to_dense() const;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A forward value came out NaN or infinite. Carries the producing op.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& op, std::size_t node);
  std::size_t node() const { return node_; }

 private:
  std::size_t node_;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Records a computation for reverse-mode differentiation. Nodes are
/// appended in evaluation order, so the record is already topologically
/// sorted; backward walks it once in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// A differentiable leaf, listed in parameters().
  Var parameter(Tensor value, std::string name = {});

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Fills gradients of every node reachable backwards from `loss`, which
  /// must be 1 x 1. May be called once per tape.
  void backward(Var loss);

  /// d loss / d v; zeros when no path leads from v to the loss.
  Tensor grad(Var v) const;
  const std::vector<Var>& parameters() const { return params_; }
  const std::string& name(Var v) const { return nodes_[v.id].name; }
  std::size_t size() const { return nodes_.size(); }

  // Op construction interface used by the free functions below.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;
  Var record(std::string op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(std::string op, Tensor value, std::span<const Var> inputs, BackwardFn fn);
  /// Adds `g` into the gradient of `v` (no-op for constants).
  void accumulate(Var v, const Tensor& g);
  /// Gradient storage of v, zero-initialized on first use. Only valid for
  /// nodes that require grad.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    std::string name;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<Var> params_;
  bool backward_done_ = false;
};

namespace ad {

Var matmul(Var a, Var b);
/// Constant sparse matrix times a dense value.
Var spmm(const SparseMatrix& a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// max(x, 0) + slope * min(x, 0) with a learned 1 x 1 slope.
Var prelu(Var x, Var slope);
Var sigmoid(Var x);
Var l2_normalize_rows(Var x);
/// weights (1 x n) times matrix (n x F), giving 1 x F.
Var row_weighted_sum(Var weights, Var matrix);
/// H H^T.
Var dot_products_matrix(Var h);
/// Row-wise log(sum_j mask_ij exp(x_ij)) with max subtraction; n x 1.
/// Every row needs at least one unmasked entry.
Var masked_log_sum_exp(Var x, const Tensor& mask);
/// sum_ij w_ij x_ij with a constant weight matrix; 1 x 1.
Var weighted_sum(Var x, const Tensor& weights);
Var sum(Var x);
/// x (n x c) plus bias (1 x c) added to every row.
Var add_row_broadcast(Var x, Var bias);
Var select_rows(Var x, std::span<const std::size_t> rows);
Var concat_rows(std::span<const Var> parts);

}  // namespace ad

/// log(sum exp(x)) with max subtraction.
double log_sum_exp(std::span<const double> x);

}  // namespace subcon

#endif  // SUBCON_AUTODIFF_HPP
