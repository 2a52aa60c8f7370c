#include "hybridcast/params.hpp"

#include <cmath>
#include <cstring>

namespace hybridcast {

namespace {
bool has_prefix(const std::string& name, const std::string& prefix) {
  return prefix.empty() || name.compare(0, prefix.size(), prefix) == 0;
}
}  // namespace

ad::Var ParamStore::add(const std::string& name, Tensor init, bool frozen) {
  require(!contains(name), "ParamStore: duplicate parameter name '" + name + "'");
  ad::Var leaf = ad::variable(std::move(init));
  leaf.node()->requires_grad = !frozen;
  names_.push_back(name);
  index_.emplace(name, Entry{leaf, frozen});
  return leaf;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), "ParamStore: unknown parameter '" + name + "'");
  return it->second;
}

ad::Var ParamStore::get(const std::string& name) const { return entry(name).leaf; }

std::size_t ParamStore::count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : index_) n += static_cast<std::size_t>(e.leaf.value().size());
  return n;
}

void ParamStore::set_frozen(const std::string& name, bool frozen) {
  auto it = index_.find(name);
  require(it != index_.end(), "ParamStore: unknown parameter '" + name + "'");
  it->second.frozen = frozen;
  it->second.leaf.node()->requires_grad = !frozen;
}

void ParamStore::freeze_all(bool frozen) {
  for (const auto& name : names_) set_frozen(name, frozen);
}

bool ParamStore::frozen(const std::string& name) const { return entry(name).frozen; }

void ParamStore::set_frozen_prefix(const std::string& prefix, bool frozen) {
  for (const auto& name : names_)
    if (has_prefix(name, prefix)) set_frozen(name, frozen);
}

void ParamStore::set_grad_enabled(bool enabled) {
  for (auto& [name, e] : index_) e.leaf.node()->requires_grad = enabled && !e.frozen;
}

void ParamStore::zero_grad() {
  for (auto& [name, e] : index_) e.leaf.node()->grad.resize(0, 0);
}

Tensor ParamStore::grad(const std::string& name) const {
  const auto& e = entry(name);
  if (e.leaf.grad().size() == 0) return Tensor::Zero(e.leaf.rows(), e.leaf.cols());
  return e.leaf.grad();
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, e] : index_) out.emplace(name, e.leaf.value());
  return out;
}

void ParamStore::restore(const std::map<std::string, Tensor>& values) {
  for (const auto& [name, value] : values) {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore::restore: unknown parameter '" + name + "'");
    require(it->second.leaf.rows() == value.rows() && it->second.leaf.cols() == value.cols(),
            "ParamStore::restore: shape mismatch for '" + name + "'");
    it->second.leaf.node()->value = value;
  }
}

Eigen::VectorXd ParamStore::flat_values(const std::string& prefix) const {
  std::vector<double> out;
  for (const auto& name : names_) {
    if (!has_prefix(name, prefix)) continue;
    const Tensor& v = entry(name).leaf.value();
    out.insert(out.end(), v.data(), v.data() + v.size());
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

Eigen::VectorXd ParamStore::flat_grads(const std::string& prefix) const {
  std::vector<double> out;
  for (const auto& name : names_) {
    if (!has_prefix(name, prefix)) continue;
    const Tensor g = grad(name);
    out.insert(out.end(), g.data(), g.data() + g.size());
  }
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

void ParamStore::set_flat_values(const Eigen::VectorXd& flat, const std::string& prefix) {
  Eigen::Index at = 0;
  for (const auto& name : names_) {
    if (!has_prefix(name, prefix)) continue;
    Tensor& v = index_.at(name).leaf.node()->value;
    require(at + v.size() <= flat.size(), "ParamStore::set_flat_values: vector too short");
    std::memcpy(v.data(), flat.data() + at, sizeof(double) * static_cast<std::size_t>(v.size()));
    at += v.size();
  }
  require(at == flat.size(), "ParamStore::set_flat_values: vector length mismatch");
}

std::uint64_t ParamStore::hash(const std::string& prefix) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& name : names_) {
    if (!has_prefix(name, prefix)) continue;
    const Tensor& v = entry(name).leaf.value();
    feed(name.data(), name.size());
    const std::int64_t shape[2] = {v.rows(), v.cols()};
    feed(shape, sizeof(shape));
    feed(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()));
  }
  return h;
}

void Adam::step(ParamStore& store) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& name : store.names()) {
    if (store.frozen(name)) continue;
    ad::Var leaf = store.get(name);
    const Tensor g = store.grad(name);
    Tensor& m = m_.try_emplace(name, Tensor::Zero(g.rows(), g.cols())).first->second;
    Tensor& v = v_.try_emplace(name, Tensor::Zero(g.rows(), g.cols())).first->second;
    m = config_.beta1 * m + (1.0 - config_.beta1) * g;
    v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    Tensor update = (m.array() / c1) / ((v.array() / c2).sqrt() + config_.epsilon);
    leaf.mutable_value() -= config_.learning_rate * update;
  }
}

Tensor fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  return rng.uniform_tensor(rows, cols, -bound, bound);
}

}  // namespace hybridcast
