#include "hybridcast/nn.hpp"

namespace hybridcast::nn {

Linear Linear::create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng) {
  Linear l;
  l.weight = store.add(name + ".weight", fan_in_uniform(in, out, in, rng));
  l.bias = store.add(name + ".bias", fan_in_uniform(1, out, in, rng));
  return l;
}

ad::Var Linear::operator()(const ad::Var& x) const {
  require(x.cols() == in(), "Linear: input has " + std::to_string(x.cols()) + " columns, layer expects " +
                                std::to_string(in()));
  return ad::add_row(ad::matmul(x, weight), bias);
}

ad::Var activate(const ad::Var& x, Activation act) {
  switch (act) {
    case Activation::relu:
      return ad::relu(x);
    case Activation::tanh:
      return ad::tanh(x);
    case Activation::identity:
      break;
  }
  return x;
}

Mlp Mlp::create(ParamStore& store, const std::string& name, const std::vector<Eigen::Index>& sizes,
                const std::vector<Activation>& activations, Rng& rng) {
  require(sizes.size() >= 2 && activations.size() == sizes.size() - 1, "Mlp: need one activation per layer");
  Mlp m;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
    m.layers.push_back(Linear::create(store, name + "." + std::to_string(i), sizes[i], sizes[i + 1], rng));
  m.activations = activations;
  return m;
}

ad::Var Mlp::operator()(ad::Var x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) x = activate(layers[i](x), activations[i]);
  return x;
}

GruCell GruCell::create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index hidden, Rng& rng) {
  GruCell g;
  g.w_input = store.add(name + ".w_input", fan_in_uniform(in, 3 * hidden, hidden, rng));
  g.w_hidden = store.add(name + ".w_hidden", fan_in_uniform(hidden, 3 * hidden, hidden, rng));
  g.b_input = store.add(name + ".b_input", fan_in_uniform(1, 3 * hidden, hidden, rng));
  g.b_hidden = store.add(name + ".b_hidden", fan_in_uniform(1, 3 * hidden, hidden, rng));
  return g;
}

ad::Var GruCell::operator()(const ad::Var& h, const ad::Var& x) const {
  const Eigen::Index hs = hidden();
  require(h.cols() == hs && x.cols() == input() && h.rows() == x.rows(), "GruCell: dimension mismatch");
  const ad::Var gx = ad::add_row(ad::matmul(x, w_input), b_input);
  const ad::Var gh = ad::add_row(ad::matmul(h, w_hidden), b_hidden);
  const ad::Var rz = ad::sigmoid(ad::slice_cols(gx, 0, 2 * hs) + ad::slice_cols(gh, 0, 2 * hs));
  const ad::Var r = ad::slice_cols(rz, 0, hs);
  const ad::Var z = ad::slice_cols(rz, hs, hs);
  const ad::Var n = ad::tanh(ad::slice_cols(gx, 2 * hs, hs) + r * ad::slice_cols(gh, 2 * hs, hs));
  return n + z * (h - n);
}

}  // namespace hybridcast::nn
