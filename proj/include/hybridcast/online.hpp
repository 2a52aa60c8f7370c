#pragma once

#include <string>
#include <vector>

#include "hybridcast/model.hpp"
#include "hybridcast/training.hpp"

namespace hybridcast {

/// Which objective the online learner descends. `corrected` uses the action
/// forward cross entropy as the third term; `as_printed` repeats the
/// trajectory forward cross entropy.
enum class OnlineObjective { corrected, as_printed };

std::string to_string(OnlineObjective o);
OnlineObjective online_objective_from_string(const std::string& s);

/// Fine-tuned linear layer on top of a frozen forecaster:
/// x_t = x_{t-1} + theta_mu * mu_t + sigma_t z_t and u = softmax(theta_1 v_1, theta_2 v_2) per class.
struct OnlineParams {
  Eigen::Matrix3d theta_mu = Eigen::Matrix3d::Identity();
  Tensor theta_act;  // C x 2, column 0 scales v_1 ("absent"), column 1 scales v_2 ("occurs")
  double bound = 10.0;
  double lipschitz = 0.0;

  static OnlineParams identity(int classes, double bound);
  /// Joint parameter vector: theta_mu row-major followed by theta_act row-major.
  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& v);
  double norm() const { return flat().norm(); }
};

/// Euclidean projection onto the ball of radius `bound`.
Eigen::VectorXd project_norm_ball(const Eigen::VectorXd& theta, double bound);

/// Quantities of one episode computed once by the frozen forecaster with the
/// ground-truth past fed in (teacher forcing). Rows are future steps.
struct OnlineExample {
  Tensor mu;          // T_x x 3 policy velocity
  Tensor prev;        // T_x x 3 previous ground-truth position
  Tensor target;      // T_x x 3 ground-truth position
  Tensor sigma;       // T_x x 9
  Tensor sigma_inv;   // T_x x 9, inverse of Sigma = sigma sigma^T
  Tensor log_det_cov; // T_x x 1, log |Sigma|
  Tensor logits;      // T_a x 2C action logits v on ground-truth windows
  Tensor label_logs;  // T_a x 2C logs of the relaxed labels
};

/// Step size rule. `horizon`: constant B / (L sqrt(2T)) tuned to the stream length T.
/// `anytime`: lambda_t = B / (L sqrt(2t)), which needs no horizon.
enum class StepSchedule { horizon, anytime };

std::string to_string(StepSchedule s);
StepSchedule step_schedule_from_string(const std::string& s);

struct OnlineConfig {
  double bound = 10.0;
  double step_size = 0.0;   // <= 0: derived from B and L, see step_size_at
  StepSchedule schedule = StepSchedule::horizon;
  int warmup = 50;          // examples used to estimate L
  OnlineObjective objective = OnlineObjective::corrected;
  int reverse_samples = 0;  // 0: exact expectation over z; n > 0: n antithetic pairs
  double tau = 0.5;
  double label_eps = 0.05;
  double sigma_prior = 0.01;
  std::uint64_t seed = 0;
  int hindsight_iterations = 10000;
  double hindsight_tolerance = 1e-6;

  void validate() const;
  nlohmann::json to_json() const;
  static OnlineConfig from_json(const nlohmann::json& j);
};

/// Step size of update t (1-based) on a stream of `horizon` examples. A positive
/// config.step_size replaces the constant for `horizon` and the t = 1 value for `anytime`.
double step_size_at(const OnlineConfig& config, double lipschitz, std::size_t horizon, std::size_t t);

/// Teacher-forced caches for every episode. Only flow models are supported.
std::vector<OnlineExample> build_online_examples(Model& model, const std::vector<Episode>& episodes,
                                                 const OnlineConfig& config);

struct OnlineTerms {
  double traj_forward = 0.0;   // H(p, q_pi)
  double traj_reverse = 0.0;   // adjusted H(q_pi, p~)
  double act_forward = 0.0;    // H(p, q_kappa)
  double total = 0.0;
};

/// Loss and gradient (same layout as OnlineParams::flat) summed over `examples`.
struct OnlineEvaluation {
  OnlineTerms terms;
  Eigen::VectorXd gradient;
};

OnlineEvaluation online_loss(const OnlineParams& params, const std::vector<const OnlineExample*>& examples,
                             const OnlineConfig& config, Rng* rng = nullptr);
OnlineEvaluation online_loss(const OnlineParams& params, const OnlineExample& example, const OnlineConfig& config,
                             Rng* rng = nullptr);

/// The same summed objective as `online_loss` (exact reverse expectation only) in closed form:
/// the trajectory part is a quadratic in theta_mu, the action part is separable per class.
/// Gradients and Hessians use the OnlineParams::flat layout.
class OnlineBatchObjective {
 public:
  OnlineBatchObjective(const std::vector<OnlineExample>& examples, const OnlineConfig& config);

  struct Value {
    double loss = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;  // filled only on request
  };
  Value evaluate(const Eigen::VectorXd& theta, bool with_hessian) const;
  std::size_t size() const { return count_; }
  /// Upper bound on the gradient norm anywhere in the ball of radius `radius`.
  double gradient_bound(double radius) const;

 private:
  std::size_t count_ = 0;
  int classes_ = 0;
  double tau_ = 0.5, act_weight_ = 1.0, constant_ = 0.0;
  Eigen::Matrix<double, 9, 9> quad_ = Eigen::Matrix<double, 9, 9>::Zero();
  Eigen::Matrix<double, 9, 1> lin_ = Eigen::Matrix<double, 9, 1>::Zero();
  Tensor logits_, label_logs_;  // stacked action rows
};

struct OnlineStepResult {
  OnlineTerms terms;     // loss before the update
  double grad_norm = 0.0;
  bool skipped = false;  // non-finite loss or gradient
};

/// One projected online gradient step on a single example.
OnlineStepResult online_step(OnlineParams& params, const OnlineExample& example, double step_size,
                             const OnlineConfig& config, Rng* rng = nullptr);

/// Lipschitz constant for the step size: the largest per-example gradient bound over the
/// parameter ball (OnlineBatchObjective::gradient_bound) among the first `count` examples.
double estimate_lipschitz(const std::vector<OnlineExample>& stream, int count, const OnlineConfig& config);

struct HindsightResult {
  OnlineParams params;
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Minimiser of the summed loss over `examples` within the norm ball
/// (Newton steps restricted to the ball, backtracking line search).
HindsightResult hindsight_optimum(const std::vector<OnlineExample>& examples, const OnlineParams& start,
                                  const OnlineConfig& config);

struct RegretRecord {
  int t = 0;
  double online_loss = 0.0;
  double hindsight_loss = 0.0;
  double cum_regret = 0.0;
  double avg_regret = 0.0;
  double bound = 0.0;
};

struct RegretRun {
  std::vector<RegretRecord> records;
  std::vector<OnlineTerms> online_terms;  // per step, before each update
  OnlineParams final_params;
  HindsightResult hindsight;
  double step_size = 0.0;  // first update
  double lipschitz = 0.0;
  double max_grad_norm = 0.0;  // largest gradient seen along the run, never above `lipschitz`
  int skipped = 0;
};

/// Online gradient descent over the stream followed by the hindsight comparison.
RegretRun regret_curve(const std::vector<OnlineExample>& stream, int classes, const OnlineConfig& config);

/// Least-squares slope of log(avg_regret) against log(t) over records with t >= t_min and positive regret.
double regret_decay_exponent(const std::vector<RegretRecord>& records, int t_min);

void write_regret_csv(const std::string& path, const std::vector<RegretRecord>& records);

/// Online fine-tuning on a stream compared with the frozen model on the same stream.
struct StreamComparison {
  OnlineTerms frozen;  // stream averages
  OnlineTerms online;  // prequential stream averages (loss before each update)
};
StreamComparison compare_on_stream(const std::vector<OnlineExample>& stream, int classes, const OnlineConfig& config);

enum class ConvexityLoss { traj_fce, traj_rce_adj, act_fce };
std::string to_string(ConvexityLoss k);
ConvexityLoss convexity_loss_from_string(const std::string& s);

struct ConvexityReport {
  ConvexityLoss kind = ConvexityLoss::traj_fce;
  int trials = 0;
  double hessian_error = 0.0;       // max |FD Hessian - closed form| (trajectory kinds)
  double min_eigenvalue = 0.0;      // smallest eigenvalue seen over all trials
  int chord_violations = 0;
  double worst_chord_gap = 0.0;     // max of f(mix) - mix of f
  double gradient_gap = 0.0;        // traj_rce_adj: max |grad rce - grad fce| at matched inputs
  bool passed = false;
  std::string detail;
  nlohmann::json to_json() const;
};

/// Numerical convexity checks of one online loss with respect to its linear layer.
ConvexityReport verify_convexity(ConvexityLoss kind, const std::vector<OnlineExample>& examples, int trials,
                                 std::uint64_t seed);

/// Closed-form Hessian of the trajectory forward CE with respect to vec(theta_mu) (column-major):
/// sum_t mu_t mu_t^T (x) Sigma_t^{-1}.
Eigen::MatrixXd traj_fce_hessian(const OnlineExample& example);

}  // namespace hybridcast
