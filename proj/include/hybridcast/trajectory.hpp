#pragma once

#include <vector>

#include "hybridcast/model.hpp"

namespace hybridcast {

/// Recurrent context of the trajectory policy for a block of rows.
struct TrajState {
  ad::Var h;     // R x H hidden state after consuming every position so far
  ad::Var prev;  // R x 3 most recent position x_{t-1}
  ad::Var ctx;   // R x Hf encoded past features
};

/// Per-step Gaussian: x_t = mu + sigma z_t.
struct StepDistribution {
  ad::Var mu_hat;   // R x 3 velocity
  ad::Var mu;       // R x 3 mean position
  ad::Var clipped;  // R x 9 softclip(S + S^T), the log of sigma
  ad::Var sigma;    // R x 9 SPD
  ad::Var log_det;  // R x 1 log det sigma = trace(clipped)
};

struct Rollout {
  std::vector<ad::Var> x;                // T_x blocks of R x 3
  std::vector<ad::Var> z;                // T_x blocks of R x 3
  std::vector<StepDistribution> steps;
  ad::Var log_density;                   // R x 1, log q(x) by change of variables
};

/// Runs the recurrent encoder over the observed past (rows = batch episodes).
TrajState warm_up(const Model& model, const Batch& batch);
TrajState repeat_state(const TrajState& s, Eigen::Index k);
/// Feeds one more position into the recurrent state.
TrajState advance(const Model& model, const TrajState& s, const ad::Var& x);

/// Mean and covariance of the next position given the context.
StepDistribution policy_step(const Model& model, const TrajState& s);

/// x = f(z): autoregressive for flow / regression models, open loop for the Gaussian baseline.
Rollout simulate(const Model& model, const TrajState& start, const std::vector<ad::Var>& z);
/// z = f^{-1}(x), teacher-forced on x, with the exact log density.
Rollout invert(const Model& model, const TrajState& start, const std::vector<ad::Var>& x);

/// Mean over episodes of -log q(x_gt); `x` holds T_x blocks of N x 3.
ad::Var forward_ce_traj(const Model& model, const Batch& batch, const std::vector<Tensor>& x);

/// Monte Carlo -E_z log N(f(z); x_gt, sigma_prior I) with z given as T_x blocks of (N*K) x 3,
/// rows ordered episode-major. Writes the rollout to `out` when non-null.
ad::Var reverse_ce_traj(const Model& model, const Batch& batch, const std::vector<Tensor>& z, Eigen::Index k,
                        double sigma_prior, Rollout* out = nullptr);

/// Standard-normal noise blocks for K samples of every batch row.
std::vector<Tensor> draw_noise(Eigen::Index rows, int steps, Rng& rng);

/// Converts T_x blocks into a (T_x x 3) tensor for row r.
Tensor trajectory_of_row(const std::vector<ad::Var>& blocks, Eigen::Index r);
Tensor trajectory_of_row(const std::vector<Tensor>& blocks, Eigen::Index r);

constexpr double kLog2Pi = 1.8378770664093453;

}  // namespace hybridcast
