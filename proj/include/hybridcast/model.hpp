#pragma once

#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridcast/nn.hpp"
#include "hybridcast/params.hpp"
#include "hybridcast/world.hpp"

namespace hybridcast {

enum class ModelKind { flow, dce, mrmc };

std::string to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

struct ModelConfig {
  EpisodeDims dims;
  ModelKind kind = ModelKind::flow;
  int gru_hidden = 100;
  int traj_mlp = 200;
  int feat_hidden = 400;
  int act_traj_mlp = 200;
  int joint_mlp = 500;
  double softclip_limit = 5.0;
  double min_precision = 1e-6;        // smallest admissible eigenvalue of sigma
  bool action_uses_trajectory = true; // false for the separately trained variant

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// All networks of one forecaster plus the data normalisation constants.
/// Parameter groups are name prefixes: "traj." (trajectory policy),
/// "act." (action policy) and "norm." (frozen constants).
class Model {
 public:
  static std::unique_ptr<Model> create(const ModelConfig& config, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  const EpisodeDims& dims() const { return config_.dims; }
  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  /// Fits position mean/scale and step scale on training episodes and
  /// biases the scale head so the initial sigma matches the data.
  void fit_normalization(const std::vector<Episode>& episodes);
  /// Sets every trainable parameter to zero (normalisation untouched).
  void zero_weights();

  Tensor pos_mean() const { return store_.get("norm.pos_mean").value(); }
  Tensor pos_inv_scale() const { return store_.get("norm.pos_scale").value().cwiseInverse(); }
  double step_scale() const { return store_.get("norm.step_scale").value()(0, 0); }

  // Trajectory policy.
  nn::Mlp traj_feat;
  nn::GruCell gru;
  nn::Mlp traj_head;  // flow/mrmc: 12 outputs per step; dce: 12 * T_x outputs at once

  // Action policy.
  nn::Mlp act_feat;
  nn::Mlp act_traj;   // empty when the action net ignores trajectories
  nn::Mlp act_joint;

 private:
  Model() = default;
  ModelConfig config_;
  ParamStore store_;
};

/// Episodes stacked row-wise for batched evaluation.
struct Batch {
  int size = 0;
  Tensor past;                      // N x 3P, row-major positions
  Tensor present;                   // N x 3
  Tensor features;                  // N x (frames * F)
  std::vector<Tensor> future;       // T_x tensors of N x 3
  Tensor actions;                   // (N * T_a) x C, rows ordered episode-major
  std::vector<const Episode*> episodes;

  Tensor past_step(int i) const { return past.middleCols(3 * i, 3); }
};

Batch make_batch(const std::vector<const Episode*>& episodes, const EpisodeDims& dims);
Batch make_batch(const std::vector<Episode>& episodes, const EpisodeDims& dims);

/// Constant (rows*k x rows) matrix that repeats every row k times consecutively.
Tensor repeat_matrix(Eigen::Index rows, Eigen::Index k);
ad::Var repeat_rows(const ad::Var& v, Eigen::Index k);
Tensor repeat_rows(const Tensor& t, Eigen::Index k);

}  // namespace hybridcast
