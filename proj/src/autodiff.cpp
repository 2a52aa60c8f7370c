#include "hybridcast/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "hybridcast/linalg.hpp"

namespace hybridcast::ad {

void Node::accumulate(const Tensor& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

double Var::item() const {
  require(rows() == 1 && cols() == 1, "item(): tensor is not a scalar, shape " + shape_string(value()));
  return value()(0, 0);
}

namespace {

Var record(const char* op, Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
  if (!value.allFinite()) throw NumericError(std::string("non-finite value produced by ") + op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  const bool needs = std::any_of(parents.begin(), parents.end(), [](const NodePtr& p) { return p->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Var(std::move(node));
}

void same_shape(const Var& a, const Var& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch " + shape_string(a.value()) + " vs " + shape_string(b.value()));
}

void need_cols(const Var& a, Eigen::Index cols, const char* op) {
  require(a.cols() == cols, std::string(op) + ": expected " + std::to_string(cols) + " columns, got " +
                                shape_string(a.value()));
}

}  // namespace

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  if (!value.allFinite()) throw NumericError("non-finite constant");
  node->value = std::move(value);
  return Var(std::move(node));
}

Var constant_scalar(double value) {
  Tensor t(1, 1);
  t(0, 0) = value;
  return constant(std::move(t));
}

Var variable(Tensor value) {
  Var v = constant(std::move(value));
  v.node()->requires_grad = true;
  return v;
}

void backward(const Var& loss) {
  require(loss.defined() && loss.rows() == 1 && loss.cols() == 1,
          "backward: loss must be a 1x1 scalar, got " + (loss.defined() ? shape_string(loss.value()) : "undefined"));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->accumulate(Tensor::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward || node->grad.size() == 0) continue;
    node->backward(*node);
    node->grad.resize(0, 0);
  }
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch " + shape_string(a.value()) + " x " +
                                    shape_string(b.value()));
  Tensor out = a.value() * b.value();
  auto pa = a.node(), pb = b.node();
  return record("matmul", std::move(out), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad * pb->value.transpose());
    if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  auto pa = a.node(), pb = b.node();
  return record("add", a.value() + b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  auto pa = a.node(), pb = b.node();
  return record("sub", a.value() - b.value(), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pb->requires_grad) pb->accumulate(-self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  auto pa = a.node(), pb = b.node();
  return record("mul", a.value().cwiseProduct(b.value()), {pa, pb}, [pa, pb](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad.cwiseProduct(pb->value));
    if (pb->requires_grad) pb->accumulate(self.grad.cwiseProduct(pa->value));
  });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row shape " + shape_string(row.value()) +
                                                         " does not match " + shape_string(a.value()));
  Tensor out = a.value();
  out.rowwise() += row.value().row(0);
  auto pa = a.node(), pr = row.node();
  return record("add_row", std::move(out), {pa, pr}, [pa, pr](Node& self) {
    if (pa->requires_grad) pa->accumulate(self.grad);
    if (pr->requires_grad) pr->accumulate(self.grad.colwise().sum());
  });
}

Var mul_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row: row shape " + shape_string(row.value()) +
                                                         " does not match " + shape_string(a.value()));
  Tensor out = a.value().array().rowwise() * row.value().row(0).array();
  auto pa = a.node(), pr = row.node();
  return record("mul_row", std::move(out), {pa, pr}, [pa, pr](Node& self) {
    if (pa->requires_grad) {
      Tensor g = self.grad.array().rowwise() * pr->value.row(0).array();
      pa->accumulate(g);
    }
    if (pr->requires_grad) pr->accumulate(self.grad.cwiseProduct(pa->value).colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  require(col.cols() == 1 && col.rows() == a.rows(), "mul_col: column shape " + shape_string(col.value()) +
                                                         " does not match " + shape_string(a.value()));
  Tensor out = a.value().array().colwise() * col.value().col(0).array();
  auto pa = a.node(), pc = col.node();
  return record("mul_col", std::move(out), {pa, pc}, [pa, pc](Node& self) {
    if (pa->requires_grad) {
      Tensor g = self.grad.array().colwise() * pc->value.col(0).array();
      pa->accumulate(g);
    }
    if (pc->requires_grad) pc->accumulate(self.grad.cwiseProduct(pa->value).rowwise().sum());
  });
}

Var scale(const Var& a, double s) {
  auto pa = a.node();
  return record("scale", a.value() * s, {pa}, [pa, s](Node& self) { pa->accumulate(self.grad * s); });
}

Var add_scalar(const Var& a, double s) {
  auto pa = a.node();
  Tensor out = a.value().array() + s;
  return record("add_scalar", std::move(out), {pa}, [pa](Node& self) { pa->accumulate(self.grad); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var square(const Var& a) {
  auto pa = a.node();
  return record("square", a.value().array().square().matrix(), {pa}, [pa](Node& self) {
    pa->accumulate(2.0 * self.grad.cwiseProduct(pa->value));
  });
}

Var tanh(const Var& a) {
  auto pa = a.node();
  Tensor out = a.value().array().tanh();
  return record("tanh", std::move(out), {pa}, [pa](Node& self) {
    Tensor g = self.grad.array() * (1.0 - self.value.array().square());
    pa->accumulate(g);
  });
}

Var sigmoid(const Var& a) {
  auto pa = a.node();
  Tensor out = (1.0 + (-a.value().array()).exp()).inverse();
  return record("sigmoid", std::move(out), {pa}, [pa](Node& self) {
    Tensor g = self.grad.array() * self.value.array() * (1.0 - self.value.array());
    pa->accumulate(g);
  });
}

Var relu(const Var& a) {
  auto pa = a.node();
  Tensor out = a.value().cwiseMax(0.0);
  return record("relu", std::move(out), {pa}, [pa](Node& self) {
    Tensor g = (pa->value.array() > 0.0).select(self.grad.array(), 0.0).matrix();
    pa->accumulate(g);
  });
}

Var exp(const Var& a) {
  auto pa = a.node();
  Tensor out = a.value().array().exp();
  return record("exp", std::move(out), {pa}, [pa](Node& self) { pa->accumulate(self.grad.cwiseProduct(self.value)); });
}

Var log(const Var& a) {
  auto pa = a.node();
  Tensor out = a.value().array().log();
  return record("log", std::move(out), {pa}, [pa](Node& self) {
    pa->accumulate(self.grad.cwiseQuotient(pa->value));
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row count mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<NodePtr> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(at);
    at += p.cols();
  }
  return record("concat_cols", std::move(out), nodes, [nodes, offsets](Node& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i]->requires_grad) nodes[i]->accumulate(self.grad.middleCols(offsets[i], nodes[i]->value.cols()));
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: column count mismatch");
    rows += p.rows();
  }
  Tensor out(rows, cols);
  std::vector<NodePtr> nodes;
  std::vector<Eigen::Index> offsets;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    nodes.push_back(p.node());
    offsets.push_back(at);
    at += p.rows();
  }
  return record("concat_rows", std::move(out), nodes, [nodes, offsets](Node& self) {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i]->requires_grad) nodes[i]->accumulate(self.grad.middleRows(offsets[i], nodes[i]->value.rows()));
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: range out of bounds");
  auto pa = a.node();
  Tensor out = a.value().middleCols(start, count);
  return record("slice_cols", std::move(out), {pa}, [pa, start, count](Node& self) {
    Tensor g = Tensor::Zero(pa->value.rows(), pa->value.cols());
    g.middleCols(start, count) = self.grad;
    pa->accumulate(g);
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: range out of bounds");
  auto pa = a.node();
  Tensor out = a.value().middleRows(start, count);
  return record("slice_rows", std::move(out), {pa}, [pa, start, count](Node& self) {
    Tensor g = Tensor::Zero(pa->value.rows(), pa->value.cols());
    g.middleRows(start, count) = self.grad;
    pa->accumulate(g);
  });
}

Var sum(const Var& a) {
  auto pa = a.node();
  Tensor out(1, 1);
  out(0, 0) = a.value().sum();
  return record("sum", std::move(out), {pa}, [pa](Node& self) {
    pa->accumulate(Tensor::Constant(pa->value.rows(), pa->value.cols(), self.grad(0, 0)));
  });
}

Var mean(const Var& a) {
  require(a.value().size() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sum(const Var& a) {
  auto pa = a.node();
  Tensor out = a.value().rowwise().sum();
  return record("row_sum", std::move(out), {pa}, [pa](Node& self) {
    Tensor g = self.grad.col(0).replicate(1, pa->value.cols());
    pa->accumulate(g);
  });
}

Var stop_gradient(const Var& a) { return constant(a.value()); }

Var transpose3(const Var& a) {
  need_cols(a, 9, "transpose3");
  static constexpr int perm[9] = {0, 3, 6, 1, 4, 7, 2, 5, 8};
  Tensor out(a.rows(), 9);
  for (int k = 0; k < 9; ++k) out.col(k) = a.value().col(perm[k]);
  auto pa = a.node();
  return record("transpose3", std::move(out), {pa}, [pa](Node& self) {
    Tensor g(self.grad.rows(), 9);
    for (int k = 0; k < 9; ++k) g.col(perm[k]) = self.grad.col(k);
    pa->accumulate(g);
  });
}

Var softclip3(const Var& a, double limit) {
  need_cols(a, 9, "softclip3");
  require(limit > 0.0, "softclip3: limit must be positive");
  const Eigen::Index n = a.rows();
  Tensor out(n, 9);
  Eigen::VectorXd factor(n), dfac(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto f = softclip_factor(a.value().row(r).norm(), limit);
    factor[r] = f.factor;
    dfac[r] = f.dfactor_over_n;
    out.row(r) = f.factor * a.value().row(r);
  }
  auto pa = a.node();
  return record("softclip3", std::move(out), {pa}, [pa, factor, dfac](Node& self) {
    Tensor g(self.grad.rows(), 9);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const double inner = self.grad.row(r).dot(pa->value.row(r));
      g.row(r) = factor[r] * self.grad.row(r) + dfac[r] * inner * pa->value.row(r);
    }
    pa->accumulate(g);
  });
}

Var expm_sym3(const Var& a) {
  need_cols(a, 9, "expm_sym3");
  const Eigen::Index n = a.rows();
  Tensor out(n, 9);
  auto eigs = std::make_shared<std::vector<SymEig3>>();
  eigs->reserve(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const Mat3 m = row_as_mat3(a.value(), r);
    const double tol = 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff());
    if (asymmetry(m) > tol) throw ContractViolation("expm_sym3: row " + std::to_string(r) + " is not symmetric");
    eigs->push_back(eig_sym3(0.5 * (m + m.transpose())));
    const SymEig3& e = eigs->back();
    const Vec3 ex = e.values.array().exp();
    set_row_mat3(out, r, e.vectors * ex.asDiagonal() * e.vectors.transpose());
  }
  auto pa = a.node();
  return record("expm_sym3", std::move(out), {pa}, [pa, eigs](Node& self) {
    Tensor g(self.grad.rows(), 9);
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      set_row_mat3(g, r, expm_sym_adjoint((*eigs)[static_cast<std::size_t>(r)], row_as_mat3(self.grad, r)));
    pa->accumulate(g);
  });
}

Var trace3(const Var& a) {
  need_cols(a, 9, "trace3");
  Tensor out = a.value().col(0) + a.value().col(4) + a.value().col(8);
  auto pa = a.node();
  return record("trace3", std::move(out), {pa}, [pa](Node& self) {
    Tensor g = Tensor::Zero(self.grad.rows(), 9);
    g.col(0) = self.grad.col(0);
    g.col(4) = self.grad.col(0);
    g.col(8) = self.grad.col(0);
    pa->accumulate(g);
  });
}

Var matvec3(const Var& m, const Var& v) {
  need_cols(m, 9, "matvec3");
  need_cols(v, 3, "matvec3");
  require(m.rows() == v.rows(), "matvec3: row count mismatch");
  const Eigen::Index n = m.rows();
  Tensor out(n, 3);
  const Tensor& mv = m.value();
  const Tensor& vv = v.value();
  for (Eigen::Index r = 0; r < n; ++r)
    for (int i = 0; i < 3; ++i)
      out(r, i) = mv(r, 3 * i) * vv(r, 0) + mv(r, 3 * i + 1) * vv(r, 1) + mv(r, 3 * i + 2) * vv(r, 2);
  auto pm = m.node(), pv = v.node();
  return record("matvec3", std::move(out), {pm, pv}, [pm, pv](Node& self) {
    const Eigen::Index rows = self.grad.rows();
    if (pm->requires_grad) {
      Tensor g(rows, 9);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) g(r, 3 * i + j) = self.grad(r, i) * pv->value(r, j);
      pm->accumulate(g);
    }
    if (pv->requires_grad) {
      Tensor g = Tensor::Zero(rows, 3);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) g(r, j) += pm->value(r, 3 * i + j) * self.grad(r, i);
      pv->accumulate(g);
    }
  });
}

Var log_softmax_pairs(const Var& logits) {
  require(logits.cols() % 2 == 0, "log_softmax_pairs: column count must be even");
  const Eigen::Index n = logits.rows(), pairs = logits.cols() / 2;
  Tensor out(n, logits.cols());
  const Tensor& x = logits.value();
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < pairs; ++c) {
      const double a = x(r, 2 * c), b = x(r, 2 * c + 1);
      const double m = std::max(a, b);
      const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
      out(r, 2 * c) = a - lse;
      out(r, 2 * c + 1) = b - lse;
    }
  auto pl = logits.node();
  return record("log_softmax_pairs", std::move(out), {pl}, [pl, pairs](Node& self) {
    Tensor g(self.grad.rows(), self.grad.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < pairs; ++c) {
        const double gs = self.grad(r, 2 * c) + self.grad(r, 2 * c + 1);
        g(r, 2 * c) = self.grad(r, 2 * c) - std::exp(self.value(r, 2 * c)) * gs;
        g(r, 2 * c + 1) = self.grad(r, 2 * c + 1) - std::exp(self.value(r, 2 * c + 1)) * gs;
      }
    pl->accumulate(g);
  });
}

Var logsumexp_pairs(const Var& x) {
  require(x.cols() % 2 == 0, "logsumexp_pairs: column count must be even");
  const Eigen::Index n = x.rows(), pairs = x.cols() / 2;
  Tensor out(n, pairs);
  Tensor weights(n, x.cols());
  const Tensor& xv = x.value();
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < pairs; ++c) {
      const double a = xv(r, 2 * c), b = xv(r, 2 * c + 1);
      const double m = std::max(a, b);
      const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
      out(r, c) = lse;
      weights(r, 2 * c) = std::exp(a - lse);
      weights(r, 2 * c + 1) = std::exp(b - lse);
    }
  auto px = x.node();
  return record("logsumexp_pairs", std::move(out), {px}, [px, weights, pairs](Node& self) {
    Tensor g(weights.rows(), weights.cols());
    for (Eigen::Index r = 0; r < g.rows(); ++r)
      for (Eigen::Index c = 0; c < pairs; ++c) {
        g(r, 2 * c) = self.grad(r, c) * weights(r, 2 * c);
        g(r, 2 * c + 1) = self.grad(r, c) * weights(r, 2 * c + 1);
      }
    px->accumulate(g);
  });
}

}  // namespace hybridcast::ad
