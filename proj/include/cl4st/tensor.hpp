#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

// Reverse-mode automatic differentiation over row-major 2D tensors.
// Every operation records its parents and a backward closure; backward()
// walks the tape in reverse topological order. Scalars are 1x1 tensors.

namespace cl4st::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> val;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // scatter this->grad into parents

  std::size_t size() const { return rows * cols; }
  double& at(std::size_t r, std::size_t c) { return val[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return val[r * cols + c]; }
  double scalar() const { return val[0]; }
};

Var constant(std::size_t rows, std::size_t cols, std::vector<double> data);
Var constant_scalar(double v);
Var leaf(std::size_t rows, std::size_t cols, std::vector<double> data);  // requires_grad
Var zeros_like_leaf(std::size_t rows, std::size_t cols);

// Arithmetic (same shape unless noted).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);         // elementwise
Var div(const Var& a, const Var& b);         // elementwise
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var matmul(const Var& a, const Var& b);
Var add_row_broadcast(const Var& a, const Var& bias);    // (m x n) + (1 x n)
Var mul_col_broadcast(const Var& a, const Var& colvec);  // row i scaled by colvec[i]

// Shape ops.
Var transpose(const Var& a);
Var reshape(const Var& a, std::size_t rows, std::size_t cols);
Var permute_rows(const Var& a, std::vector<std::size_t> perm);      // bijection
Var gather_rows(const Var& a, std::vector<std::size_t> idx);        // may repeat
Var scatter_add_rows(const Var& a, std::vector<std::size_t> dst, std::size_t out_rows);
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, std::size_t c0, std::size_t c1);

// Nonlinearities and pointwise maps.
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var elu(const Var& a);
Var exp_(const Var& a);
Var log_(const Var& a);
Var square(const Var& a);
Var sqrt_(const Var& a);

// Reductions and row-structured ops.
Var sum(const Var& a);                       // 1x1
Var mean(const Var& a);                      // 1x1
Var mean_rows(const Var& a);                 // 1 x n, mean over rows
Var softmax_rows(const Var& a);
Var logsumexp_rows(const Var& a);            // m x 1
Var row_l2_normalize(const Var& a, double eps = 1e-12);
// Softmax over contiguous segments of a column vector (m x 1).
// offsets has n_segments+1 entries delimiting each segment.
Var segment_softmax(const Var& a, std::vector<std::size_t> offsets);

// Losses as fused ops.
Var huber(const Var& pred, const std::vector<double>& target, double delta);  // mean
Var mse(const Var& pred, const std::vector<double>& target);                  // mean

// Straight-through estimator: forward takes `hard` values (a constant),
// gradient flows to `soft` unchanged. Shapes must match.
Var straight_through(const Var& soft, const std::vector<double>& hard);

void backward(const Var& root);
void zero_grad(const std::vector<Var>& params);

}  // namespace cl4st::ad
