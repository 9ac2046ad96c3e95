#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "crossenc/rng.hpp"
#include "crossenc/tensor.hpp"

namespace crossenc {

// Reverse-mode automatic differentiation over whole tensors. The computation
// record is dynamic: each forward pass builds a fresh DAG of shared nodes and
// backward() walks it once in reverse topological order. Parameters are leaf
// nodes that outlive the graph; intermediate nodes are freed when the loss
// handle goes out of scope.
struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backprop;  // pulls this->grad into parents
  std::string name;

  Tensor& ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.rows(), value.cols());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.data.begin(), grad.data.end(), 0.0f);
  }
};

// Leaf constructors.
Var make_param(Tensor value, std::string name);
Var make_const(Tensor value);

// Seeds grad(loss) = 1 and accumulates gradients into every reachable node
// with requires_grad. loss must be a 1x1 tensor. A cycle in the computation
// record raises NumericsError.
void backward(const Var& loss);

// Elementwise and linear algebra.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, float c);
Var add_rowvec(const Var& a, const Var& row);  // broadcast 1xN over MxN
Var matmul(const Var& a, const Var& b);        // A(mxk) B(kxn)
Var matmul_nt(const Var& a, const Var& b);     // A(mxk) B(nxk)^T

// Structural ops.
Var slice_rows(const Var& x, int begin, int end);
Var slice_cols(const Var& x, int begin, int end);
Var concat_rows(const std::vector<Var>& xs);
Var concat_cols(const std::vector<Var>& xs);
Var gather_rows(const Var& x, const std::vector<int>& rows);
Var flatten_row(const Var& x);  // MxN -> 1x(M*N)
Var pick(const Var& x, int r, int c);
Var mean_vars(const std::vector<Var>& xs);  // elementwise mean of same-shape vars

// Nonlinearities and normalization.
Var gelu(const Var& x);
Var relu(const Var& x);
Var log_clamped(const Var& x, float floor);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, float eps);

// Row softmax with max-subtraction. Non-finite input raises NumericsError
// naming the offending row. An optional additive mask (same shape constant)
// is applied to the logits first; use -1e9f entries to exclude positions.
Var softmax_rows(const Var& x);
Var softmax_rows_masked(const Var& x, const Tensor& additive_mask);

// Inverted dropout; identity when !training or p == 0.
Var dropout(const Var& x, float p, bool training, Rng& rng);

// Table lookup: one output row per id. Backward scatter-adds into the table.
Var embedding(const Var& table, const std::vector<int>& ids);

// Mean negative log-likelihood of labels under row-wise softmax(logits).
Var cross_entropy_mean(const Var& logits, const std::vector<int>& labels);

Var sum_all(const Var& x);
Var mean_all(const Var& x);

// Plain-tensor helper shared by op implementations and oracles.
void softmax_rows_inplace(Tensor& t);

}  // namespace crossenc
