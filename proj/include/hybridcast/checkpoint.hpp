#pragma once

#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "hybridcast/model.hpp"
#include "hybridcast/training.hpp"

namespace hybridcast {

/// Hex SHA-1 of "blob <size>\0" followed by the bytes, as `git hash-object` computes it.
std::string git_blob_hash(const std::string& bytes);
std::string file_blob_hash(const std::string& path);

/// Blob hash of the compact JSON dump of a configuration document.
std::string config_hash(const nlohmann::json& config);

struct CheckpointInfo {
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  std::uint64_t seed = 0;
  nlohmann::json extra = nlohmann::json::object();  // free-form (training summary, provenance)

  /// Hash over the model, train and loss configurations and the seed.
  std::string config_hash() const;
};

/// Binary checkpoint: the 8-byte magic "HYCKPT01", a little-endian u64 header
/// length, a JSON header (configs, seed, config hash, parameter names, shapes and
/// offsets), then every parameter as little-endian f64 values in row-major order.
void save_checkpoint(const std::string& path, const Model& model, const CheckpointInfo& info);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  CheckpointInfo info;
  nlohmann::json header;
};

/// Rebuilds the model from the stored configuration and restores every parameter.
/// Throws ContractViolation on a bad magic, truncated payload, or name / shape mismatch.
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace hybridcast
