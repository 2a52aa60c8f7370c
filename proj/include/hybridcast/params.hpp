#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hybridcast/autodiff.hpp"
#include "hybridcast/rng.hpp"

namespace hybridcast {

/// Named parameter tensors with gradient accumulators and frozen flags.
/// Each parameter is an autodiff leaf; freezing a parameter stops gradient
/// from being recorded for it and the optimizer skips it.
class ParamStore {
 public:
  ad::Var add(const std::string& name, Tensor init, bool frozen = false);
  ad::Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t count() const;  // total scalar count

  void set_frozen(const std::string& name, bool frozen);
  void freeze_all(bool frozen);
  bool frozen(const std::string& name) const;
  /// Freezes or thaws every parameter whose name starts with `prefix`.
  void set_frozen_prefix(const std::string& prefix, bool frozen);

  /// Temporarily stops every leaf from recording gradient (evaluation);
  /// enabling again restores the per-parameter frozen flags.
  void set_grad_enabled(bool enabled);

  void zero_grad();
  Tensor grad(const std::string& name) const;  // zeros when nothing accumulated

  std::map<std::string, Tensor> snapshot() const;
  void restore(const std::map<std::string, Tensor>& values);

  /// Concatenated values / gradients in `names()` order, optionally restricted by prefix.
  Eigen::VectorXd flat_values(const std::string& prefix = "") const;
  Eigen::VectorXd flat_grads(const std::string& prefix = "") const;
  void set_flat_values(const Eigen::VectorXd& flat, const std::string& prefix = "");

  /// FNV-1a over names, shapes and raw bytes of the selected parameters.
  std::uint64_t hash(const std::string& prefix = "") const;

 private:
  struct Entry {
    ad::Var leaf;
    bool frozen = false;
  };
  std::vector<std::string> names_;
  std::map<std::string, Entry> index_;

  const Entry& entry(const std::string& name) const;
};

/// Disables gradient tracking on a store for the lifetime of the scope.
class NoGradScope {
 public:
  explicit NoGradScope(ParamStore& store) : store_(store) { store_.set_grad_enabled(false); }
  ~NoGradScope() { store_.set_grad_enabled(true); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  ParamStore& store_;
};

/// Adam with bias correction. Frozen parameters are never touched.
struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(ParamStore& store);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Tensor fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng);

}  // namespace hybridcast
