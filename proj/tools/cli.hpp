#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridcast/evaluate.hpp"
#include "hybridcast/online.hpp"
#include "hybridcast/training.hpp"
#include "hybridcast/world.hpp"

namespace hybridcast::cli {

/// Everything a command needs, resolved from the config file and flag overrides.
struct RunConfig {
  std::string command;
  std::string config_path;
  std::string data_dir;
  std::string checkpoint;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;

  WorldConfig world = WorldConfig::defaults();
  int episodes = 1000;
  std::vector<double> split{0.7, 0.1, 0.2};
  std::uint64_t split_seed = 0;
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  EvalConfig eval;
  OnlineConfig online;

  std::string train_split = "train";  // train: which split to fit on ("train" or "test")
  std::string eval_split = "test";    // eval / export / online / regret: which split to read
  std::string protocol;               // online: "train-test" or "test-train"
  int limit = 0;                      // export: number of episodes (0: all)

  nlohmann::json to_json() const;
  /// Applies a config document (sections world, episodes, split, model, train, loss, eval, online).
  void apply(const nlohmann::json& doc);
};

/// Parses argv and runs one command. Returns the process exit code; on failure an
/// error.json document is written to the output directory.
int run(int argc, const char* const* argv);

}  // namespace hybridcast::cli
