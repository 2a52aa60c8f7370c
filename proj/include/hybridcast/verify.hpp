#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridcast/online.hpp"

namespace hybridcast {

/// Outcome of one self-check. `value` is the measured error (or statistic) and
/// the check passes when it is within `tolerance` in the stated direction.
struct CheckResult {
  std::string suite;
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
  nlohmann::json to_json() const;
};

struct VerifyConfig {
  int flow_models = 50;        // random parameter draws for the round trip
  int flow_rows = 20;          // noise draws per parameter draw
  int gradient_points = 20;
  double fd_step = 1e-5;
  int convexity_trials = 1000;
  int regret_stream = 300;
  std::uint64_t seed = 0;
};

/// invert(simulate(z)) == z over random models and noise; analytic log-det of the
/// flow Jacobian against a finite-difference Jacobian.
std::vector<CheckResult> verify_flow(const ModelConfig& config, const std::vector<Episode>& episodes,
                                     const VerifyConfig& vc);

/// Central-difference directional checks of every loss term against reverse-mode gradients.
std::vector<CheckResult> verify_gradients(const ModelConfig& config, const std::vector<Episode>& episodes,
                                          const LossConfig& loss, const VerifyConfig& vc);

/// The two-category Gumbel-Softmax density integrates to one.
std::vector<CheckResult> verify_normalization(const VerifyConfig& vc);

/// Convexity of the online losses and the regret bound on a short stream of `episodes`.
std::vector<CheckResult> verify_online(Model& model, const std::vector<Episode>& episodes, const OnlineConfig& oc,
                                       const VerifyConfig& vc);

}  // namespace hybridcast
