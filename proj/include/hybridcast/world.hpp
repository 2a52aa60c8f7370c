#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridcast/rng.hpp"
#include "hybridcast/tensor.hpp"

namespace hybridcast {

/// Sizes shared by every episode of a dataset and every model trained on it.
struct EpisodeDims {
  int past_steps = 10;       // P, positions at 5 fps over 2 s
  int future_steps = 25;     // T_x, positions at 5 fps over 5 s
  int action_steps = 5;      // T_a, actions at 1 fps
  int feature_frames = 4;    // past context frames at 2 fps
  int feature_dim = 16;      // F
  int action_classes = 12;   // C_a

  /// Trajectory index (1-based) that action step k (1-based) is aligned to.
  int aligned_index(int action_step) const { return action_step * future_steps / action_steps; }
};

/// Synthetic kitchen: an agent dwells at stations (station-bound actions fire)
/// and walks between them (motion-bound actions fire). Stations are visited in
/// random tours that cover every station once before any repeats.
struct WorldConfig {
  EpisodeDims dims;
  std::vector<std::array<double, 3>> stations;   // positions in metres
  std::array<double, 3> box{3.6, 3.0, 0.75};     // stations live in [0, box]
  std::vector<std::vector<int>> station_actions; // per station, fired in equal consecutive phases of a dwell
  int walk_class = 10;                           // fires whenever travelling (-1: none)
  int carry_class = 11;                          // fires when travelling away from `carry_origin` (-1: none)
  int carry_origin = 0;
  std::vector<std::string> class_names;
  double speed_min = 0.3;                        // metres per second
  double speed_max = 0.6;
  double noise = 0.015;                          // per-frame positional jitter scale
  double dwell_min = 2.0;                        // seconds, uniform dwell time
  double dwell_max = 8.0;
  bool dwell_forever = false;
  double feature_noise = 0.1;
  double proximity_radius = 0.45;
  double burn_in = 10.0;                         // seconds simulated before the first episode of a video
  int video_count = 135;
  std::uint64_t seed = 0;

  static WorldConfig defaults();
  void validate() const;
  nlohmann::json to_json() const;
  static WorldConfig from_json(const nlohmann::json& j);

  /// Long-run fraction of action steps at which each class is active, from the
  /// dwell and travel-time distributions (uniform station choice, straight paths).
  std::vector<double> target_action_rates() const;
};

struct Episode {
  std::string episode_id;
  int video_id = 0;
  Tensor past_positions;    // P x 3, last row is the present
  Tensor past_features;     // frames x F
  Tensor future_positions;  // T_x x 3
  Tensor future_actions;    // T_a x C_a, 1 = occurs, 0 = absent

  /// Throws ContractViolation when shapes or value constraints are broken.
  void validate(const EpisodeDims& dims) const;
  const Vec3 last_observed() const { return past_positions.row(past_positions.rows() - 1).transpose(); }
};

struct DatasetSplit {
  std::vector<std::string> train, validation, test;
  std::vector<double> proportions;
};

/// Deterministic in (config, n_episodes); videos are simulated from per-video
/// substreams so the result does not depend on generation order.
std::vector<Episode> generate_dataset(const WorldConfig& config, int n_episodes);

/// Video-grouped split. Retries shuffles until every class occurs in both train and
/// test; throws with the offending class list otherwise.
DatasetSplit split_dataset(const std::vector<Episode>& episodes, const std::vector<double>& proportions,
                           int action_classes, std::uint64_t seed);

std::vector<Episode> select_episodes(const std::vector<Episode>& episodes, const std::vector<std::string>& ids);

/// JSONL episode records (one object per line) with 0/1 one-hot action pairs.
nlohmann::json episode_to_json(const Episode& e);
Episode episode_from_json(const nlohmann::json& j);
void write_jsonl(const std::string& path, const std::vector<Episode>& episodes);
std::vector<Episode> read_jsonl(const std::string& path);

/// Sidecar manifest: config, seed, class names and split lists.
nlohmann::json dataset_manifest(const WorldConfig& config, int n_episodes, const DatasetSplit& split);
DatasetSplit split_from_manifest(const nlohmann::json& manifest);

}  // namespace hybridcast
