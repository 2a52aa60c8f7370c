#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridcast/model.hpp"

namespace hybridcast {

enum class TrainMode { joint, separate, forward_only, dce, mrmc };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);
/// Architecture implied by a training mode (kind, whether actions see trajectories).
ModelConfig model_config_for(TrainMode mode, ModelConfig base);

struct LossConfig {
  double beta_traj = 0.02;
  double beta_act = 0.1;
  double sigma_prior = 0.01;   // prior variance around the ground-truth positions
  double prior_scale = 0.5;    // temporal width of the action prior, in action steps
  double eta = 1e-4;           // variance of the training-time trajectory perturbation
  double tau = 0.5;
  double label_eps = 0.05;
  double prior_floor = 0.01;

  void validate() const;
  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json& j);
};

struct TrainConfig {
  TrainMode mode = TrainMode::joint;
  double learning_rate = 1e-4;
  int batch_size = 16;
  int samples = 12;            // K trajectory / action samples per example
  int epochs = 50;
  int pretrain_epochs = 5;     // trajectory-only epochs before joint training (joint mode)
  int validation_limit = 0;    // 0: use every validation episode
  std::string parts = "all";   // "traj" or "act" trains only that policy (separate mode)
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// The four logged cross entropies and the optimised total
/// total = h_p_qpi + h_p_qkappa + beta_traj * h_rev_traj + beta_act * h_rev_act.
struct LossTerms {
  double h_p_qpi = 0.0;
  double h_p_qkappa = 0.0;
  double h_rev_traj = 0.0;
  double h_rev_act = 0.0;
  double total = 0.0;
};

/// Adds N(0, eta I) to every future position. eta = 0 returns the input unchanged.
Episode perturb_trajectories(const Episode& episode, double eta, Rng& rng);
std::vector<Tensor> perturb_blocks(const std::vector<Tensor>& blocks, double eta, Rng& rng);

/// Builds the batch objective for `mode`. When `phase_traj_only` is set only the
/// trajectory terms enter the optimised scalar (pretraining). Draws all noise from `rng`.
struct BatchObjective {
  ad::Var loss;
  LossTerms terms;
};
BatchObjective batch_objective(const Model& model, const Batch& batch, TrainMode mode, const LossConfig& loss,
                               int samples, bool perturb, bool phase_traj_only, Rng& rng);

struct EpochLog {
  int epoch = 0;
  LossTerms train;
  double val_total = 0.0;
};

struct TrainResult {
  std::unique_ptr<Model> model;   // parameters of the best validation epoch
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val = 0.0;
  bool diverged = false;
  std::string message;
};

/// Adam on the complementary objective; keeps the parameters of the best validation epoch.
TrainResult batch_train(const std::vector<Episode>& train, const std::vector<Episode>& validation,
                        const ModelConfig& model_config, const TrainConfig& config, const LossConfig& loss);

/// Mean loss terms over a set of episodes (no perturbation, gradients disabled).
LossTerms evaluate_objective(Model& model, const std::vector<Episode>& episodes, TrainMode mode, const LossConfig& loss,
                             int samples, std::uint64_t seed, int batch_size = 64);

void write_training_log(const std::string& path, const std::vector<EpochLog>& log);

}  // namespace hybridcast
