#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "hybridcast/tensor.hpp"

namespace hybridcast::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the recorded computation. Leaves have no backward function.
struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor& g);
};

/// Handle to a node. Copies share the node; operations record new nodes.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  double item() const;
  const NodePtr& node() const { return node_; }
  bool defined() const { return static_cast<bool>(node_); }

 private:
  NodePtr node_;
};

/// Constant input (never receives gradient).
Var constant(Tensor value);
Var constant_scalar(double value);
/// Leaf that accumulates gradient.
Var variable(Tensor value);

/// Reverse sweep from a 1x1 loss; accumulates into every reachable leaf.
void backward(const Var& loss);

// Elementwise / linear algebra.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_row(const Var& a, const Var& row);  // broadcast a 1xC row over all rows
Var mul_row(const Var& a, const Var& row);
Var mul_col(const Var& a, const Var& col);  // broadcast an Nx1 column over all columns
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
Var square(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);

// Shape manipulation and reductions.
Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var sum(const Var& a);
Var mean(const Var& a);
Var row_sum(const Var& a);  // N x 1
Var stop_gradient(const Var& a);

// Batched 3x3 operations: each row holds one row-major 3x3 matrix in 9 columns.
Var transpose3(const Var& a);
Var softclip3(const Var& a, double limit);
Var expm_sym3(const Var& a);
Var trace3(const Var& a);                   // N x 1
Var matvec3(const Var& m, const Var& v);    // (N x 9, N x 3) -> N x 3

// Binary pair operations: columns (2c, 2c+1) form one categorical pair.
Var log_softmax_pairs(const Var& logits);   // N x 2C
Var logsumexp_pairs(const Var& x);          // N x 2C -> N x C

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

}  // namespace hybridcast::ad
