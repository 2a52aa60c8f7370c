#pragma once

#include <string>
#include <vector>

#include "hybridcast/autodiff.hpp"
#include "hybridcast/params.hpp"

namespace hybridcast::nn {

enum class Activation { identity, relu, tanh };

/// Affine layer y = x W + b with W stored as [in x out].
struct Linear {
  ad::Var weight;
  ad::Var bias;

  static Linear create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng);
  ad::Var operator()(const ad::Var& x) const;
  Eigen::Index in() const { return weight.rows(); }
  Eigen::Index out() const { return weight.cols(); }
};

ad::Var activate(const ad::Var& x, Activation act);

/// Stack of Linear layers with one activation per layer.
struct Mlp {
  std::vector<Linear> layers;
  std::vector<Activation> activations;

  static Mlp create(ParamStore& store, const std::string& name, const std::vector<Eigen::Index>& sizes,
                    const std::vector<Activation>& activations, Rng& rng);
  ad::Var operator()(ad::Var x) const;
};

/// Gated recurrent unit (reset / update / candidate gates, tanh candidate):
///   r = sig(x Wr + h Ur + b),  z = sig(x Wz + h Uz + b),
///   n = tanh(x Wn + bn + r * (h Un + bn')),  h' = (1 - z) * n + z * h.
/// Gate blocks are packed along columns in the order r, z, n.
struct GruCell {
  ad::Var w_input;    // [in x 3H]
  ad::Var w_hidden;   // [H x 3H]
  ad::Var b_input;    // [1 x 3H]
  ad::Var b_hidden;   // [1 x 3H]

  static GruCell create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng);
  ad::Var operator()(const ad::Var& h, const ad::Var& x) const;
  Eigen::Index hidden() const { return w_hidden.rows(); }
  Eigen::Index input() const { return w_input.rows(); }
};

}  // namespace hybridcast::nn
