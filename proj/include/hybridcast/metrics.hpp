#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridcast/tensor.hpp"

namespace hybridcast {

struct MsdResult {
  double min_msd = 0.0;
  double mean_msd = 0.0;
};

/// Squared distances averaged over time steps and coordinates, then min / mean over samples.
MsdResult min_mean_msd(const std::vector<Tensor>& samples, const Tensor& truth);

struct PrF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

double f1_score(double precision, double recall);

/// Precision and recall of one time step (binary rows). A zero denominator
/// yields 1 when tp = fp = fn = 0 and 0 otherwise.
PrF1 step_precision_recall(const Eigen::Ref<const RowVector>& predicted, const Eigen::Ref<const RowVector>& truth);

/// Example-based scores averaged over examples and steps (T_a x C_a binary tensors).
PrF1 example_pr_f1(const std::vector<Tensor>& predicted, const std::vector<Tensor>& truth);

/// Recall when the K most probable classes are predicted at every step, K = 1..k_max.
/// Ties are broken by ascending class index. `probabilities` are T_a x C_a occurrence probabilities.
std::vector<double> topk_recall(const std::vector<Tensor>& probabilities, const std::vector<Tensor>& truth, int k_max);

/// Cosine similarity with the conventions: both vectors zero -> 1, exactly one zero -> 0.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Mean pairwise cosine over all unordered pairs.
double mean_pairwise_cosine(const std::vector<Eigen::VectorXd>& vectors);

/// Size of the largest subset whose pairwise cosines are all below `threshold`.
int distinct_count(const std::vector<Eigen::VectorXd>& vectors, double threshold);

struct DiversityBlock {
  double n_act_tr = 0.0;       // mean over pairs of classes occurring at the same step in both
  double n_act_tu = 0.0;       // mean over pairs of classes occurring anywhere in both
  double traj_cosim = 0.0;
  double traj_distinct = 0.0;  // mean over examples
  double act_cosim_tr = 0.0;
  double act_cosim_tu = 0.0;
};

/// Diversity of one example's K samples (trajectories T_x x 3 relative to `origin`, actions T_a x C_a).
DiversityBlock diversity(const std::vector<Tensor>& trajectories, const Eigen::Vector3d& origin,
                         const std::vector<Tensor>& actions, double threshold = 0.3);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(const std::vector<double>& values);

struct MetricsReport {
  std::string label;
  int examples = 0;
  int samples = 0;
  double h_p_qpi = 0.0;
  double h_p_qkappa = 0.0;
  MeanStd min_msd;
  MeanStd mean_msd;
  PrF1 scores;
  std::vector<double> topk;
  DiversityBlock diversity;

  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

}  // namespace hybridcast
