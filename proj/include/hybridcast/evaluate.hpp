#pragma once

#include <vector>

#include "hybridcast/metrics.hpp"
#include "hybridcast/model.hpp"
#include "hybridcast/training.hpp"

namespace hybridcast {

/// K sampled futures of one episode.
struct Forecast {
  std::vector<Tensor> trajectories;   // K x (T_x x 3)
  std::vector<Tensor> actions;        // K x (T_a x C_a), hardened
  std::vector<Tensor> probabilities;  // K x (T_a x C_a), occurrence probability u_2
  std::vector<Tensor> diverse_actions;  // K x (T_a x C_a), hardened with scaled Gumbel noise
};

struct EvalConfig {
  int samples = 12;
  double diversity_noise_scale = 0.3;  // Gumbel noise factor for the diversity block
  int batch_size = 64;
  std::uint64_t seed = 0;
};

/// Samples K trajectories per episode, then one action sequence per trajectory.
/// The regression baseline is deterministic: every sample is its single prediction.
std::vector<Forecast> sample_forecasts(Model& model, const std::vector<Episode>& episodes, const EvalConfig& config);

/// Full report: forward cross entropies, MSD, precision / recall / F1, top-K recall and diversity.
MetricsReport evaluate_model(Model& model, const std::vector<Episode>& episodes, const LossConfig& loss,
                             const EvalConfig& config);

}  // namespace hybridcast
