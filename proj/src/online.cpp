#include "hybridcast/online.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include <Eigen/Eigenvalues>

#include "hybridcast/action.hpp"
#include "hybridcast/linalg.hpp"
#include "hybridcast/trajectory.hpp"

namespace hybridcast {

std::string to_string(OnlineObjective o) { return o == OnlineObjective::corrected ? "corrected" : "as-printed"; }

OnlineObjective online_objective_from_string(const std::string& s) {
  if (s == "corrected") return OnlineObjective::corrected;
  if (s == "as-printed" || s == "as_printed") return OnlineObjective::as_printed;
  throw ContractViolation("unknown online objective '" + s + "' (expected corrected or as-printed)");
}

std::string to_string(StepSchedule s) { return s == StepSchedule::horizon ? "horizon" : "anytime"; }

StepSchedule step_schedule_from_string(const std::string& s) {
  if (s == "horizon") return StepSchedule::horizon;
  if (s == "anytime") return StepSchedule::anytime;
  throw ContractViolation("unknown step schedule '" + s + "' (expected horizon or anytime)");
}

double step_size_at(const OnlineConfig& config, double lipschitz, std::size_t horizon, std::size_t t) {
  require(t >= 1 && horizon >= 1, "step_size_at: steps are 1-based");
  if (config.schedule == StepSchedule::horizon)
    return config.step_size > 0.0 ? config.step_size
                                  : config.bound / (lipschitz * std::sqrt(2.0 * static_cast<double>(horizon)));
  const double first = config.step_size > 0.0 ? config.step_size : config.bound / (lipschitz * std::sqrt(2.0));
  return first / std::sqrt(static_cast<double>(t));
}

OnlineParams OnlineParams::identity(int classes, double bound) {
  require(classes >= 1, "OnlineParams: need at least one class");
  OnlineParams p;
  p.theta_act = Tensor::Ones(classes, 2);
  p.bound = bound;
  return p;
}

Eigen::VectorXd OnlineParams::flat() const {
  Eigen::VectorXd v(9 + theta_act.size());
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) v[3 * i + j] = theta_mu(i, j);
  for (Eigen::Index i = 0; i < theta_act.size(); ++i) v[9 + i] = theta_act.data()[i];
  return v;
}

void OnlineParams::set_flat(const Eigen::VectorXd& v) {
  require(v.size() == 9 + theta_act.size(), "OnlineParams::set_flat: length mismatch");
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) theta_mu(i, j) = v[3 * i + j];
  for (Eigen::Index i = 0; i < theta_act.size(); ++i) theta_act.data()[i] = v[9 + i];
}

Eigen::VectorXd project_norm_ball(const Eigen::VectorXd& theta, double bound) {
  require(bound > 0.0, "project_norm_ball: bound must be positive");
  const double n = theta.norm();
  return n <= bound ? theta : Eigen::VectorXd(theta * (bound / n));
}

void OnlineConfig::validate() const {
  require(bound > 0.0, "OnlineConfig: bound must be positive");
  require(warmup >= 1, "OnlineConfig: warmup must be at least one example");
  require(reverse_samples >= 0, "OnlineConfig: reverse_samples must be non-negative");
  require(tau > 0.0 && sigma_prior > 0.0, "OnlineConfig: tau and sigma_prior must be positive");
  require(label_eps > 0.0 && label_eps < 0.5, "OnlineConfig: label_eps must lie in (0, 0.5)");
  require(hindsight_iterations >= 1 && hindsight_tolerance > 0.0, "OnlineConfig: invalid hindsight settings");
}

nlohmann::json OnlineConfig::to_json() const {
  return {{"bound", bound},
          {"step_size", step_size},
          {"warmup", warmup},
          {"objective", to_string(objective)},
          {"schedule", to_string(schedule)},
          {"reverse_samples", reverse_samples},
          {"tau", tau},
          {"label_eps", label_eps},
          {"sigma_prior", sigma_prior},
          {"seed", seed},
          {"hindsight_iterations", hindsight_iterations},
          {"hindsight_tolerance", hindsight_tolerance}};
}

OnlineConfig OnlineConfig::from_json(const nlohmann::json& j) {
  OnlineConfig c;
  c.bound = j.value("bound", c.bound);
  c.step_size = j.value("step_size", c.step_size);
  c.warmup = j.value("warmup", c.warmup);
  if (j.contains("objective")) c.objective = online_objective_from_string(j["objective"].get<std::string>());
  if (j.contains("schedule")) c.schedule = step_schedule_from_string(j["schedule"].get<std::string>());
  c.reverse_samples = j.value("reverse_samples", c.reverse_samples);
  c.tau = j.value("tau", c.tau);
  c.label_eps = j.value("label_eps", c.label_eps);
  c.sigma_prior = j.value("sigma_prior", c.sigma_prior);
  c.seed = j.value("seed", c.seed);
  c.hindsight_iterations = j.value("hindsight_iterations", c.hindsight_iterations);
  c.hindsight_tolerance = j.value("hindsight_tolerance", c.hindsight_tolerance);
  c.validate();
  return c;
}

std::vector<OnlineExample> build_online_examples(Model& model, const std::vector<Episode>& episodes,
                                                 const OnlineConfig& config) {
  require(model.config().kind == ModelKind::flow, "build_online_examples: online fine-tuning needs a flow model");
  const EpisodeDims& d = model.dims();
  NoGradScope no_grad(model.store());
  std::vector<OnlineExample> out;
  out.reserve(episodes.size());
  constexpr std::size_t chunk_size = 64;
  for (std::size_t start = 0; start < episodes.size(); start += chunk_size) {
    std::vector<const Episode*> chunk;
    for (std::size_t i = start; i < std::min(episodes.size(), start + chunk_size); ++i) chunk.push_back(&episodes[i]);
    const Batch batch = make_batch(chunk, d);
    std::vector<ad::Var> xs;
    for (const auto& f : batch.future) xs.push_back(ad::constant(f));
    const Rollout roll = invert(model, warm_up(model, batch), xs);
    const Tensor windows = model.config().action_uses_trajectory ? action_windows(model, batch, batch.future, 1) : Tensor();
    const Tensor logits = action_logits(model, batch.features, windows).value();
    const Tensor label_logs = relaxed_label_logs(batch.actions, config.label_eps);

    for (int e = 0; e < batch.size; ++e) {
      OnlineExample ex;
      ex.mu.resize(d.future_steps, 3);
      ex.prev.resize(d.future_steps, 3);
      ex.target.resize(d.future_steps, 3);
      ex.sigma.resize(d.future_steps, 9);
      ex.sigma_inv.resize(d.future_steps, 9);
      ex.log_det_cov.resize(d.future_steps, 1);
      for (int t = 0; t < d.future_steps; ++t) {
        const StepDistribution& s = roll.steps[static_cast<std::size_t>(t)];
        ex.mu.row(t) = s.mu_hat.value().row(e);
        ex.prev.row(t) = t == 0 ? Tensor(batch.present.row(e)) : Tensor(batch.future[static_cast<std::size_t>(t - 1)].row(e));
        ex.target.row(t) = batch.future[static_cast<std::size_t>(t)].row(e);
        ex.sigma.row(t) = s.sigma.value().row(e);
        const Eigen::Matrix3d clipped = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(
            Tensor(s.clipped.value().row(e)).data());
        const Eigen::Matrix3d inv_sigma = expm_sym(Mat3(-clipped));
        const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> prec = inv_sigma * inv_sigma.transpose();
        ex.sigma_inv.row(t) = Eigen::Map<const RowVector>(prec.data(), 9);
        ex.log_det_cov(t, 0) = 2.0 * clipped.trace();
      }
      ex.logits = logits.middleRows(static_cast<Eigen::Index>(e) * d.action_steps, d.action_steps);
      ex.label_logs = label_logs.middleRows(static_cast<Eigen::Index>(e) * d.action_steps, d.action_steps);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

namespace {

Tensor stack(const std::vector<const OnlineExample*>& examples, Tensor OnlineExample::*field) {
  Eigen::Index rows = 0;
  for (const auto* e : examples) rows += (e->*field).rows();
  Tensor out(rows, (examples.front()->*field).cols());
  Eigen::Index at = 0;
  for (const auto* e : examples) {
    const Tensor& v = e->*field;
    out.middleRows(at, v.rows()) = v;
    at += v.rows();
  }
  return out;
}

Tensor grad_or_zero(const ad::Var& v) {
  return v.grad().size() == 0 ? Tensor(Tensor::Zero(v.rows(), v.cols())) : v.grad();
}

double sum_of_squares(const Tensor& t) { return t.squaredNorm(); }

Eigen::MatrixXd kron3(const Eigen::Matrix3d& a, const Eigen::Matrix3d& b) {
  Eigen::MatrixXd out(9, 9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) out.block<3, 3>(3 * i, 3 * j) = a(i, j) * b;
  return out;
}

struct TermWeights {
  double traj_forward, traj_reverse, act_forward;
};

TermWeights objective_weights(OnlineObjective o) {
  return o == OnlineObjective::corrected ? TermWeights{1.0, 1.0, 1.0} : TermWeights{2.0, 1.0, 0.0};
}

OnlineEvaluation evaluate_terms(const OnlineParams& params, const std::vector<const OnlineExample*>& examples,
                                const OnlineConfig& config, Rng* rng, const TermWeights& w) {
  require(!examples.empty(), "online_loss: no examples");
  require(params.theta_act.cols() == 2 && 2 * params.theta_act.rows() == examples.front()->logits.cols(),
          "online_loss: theta_act does not match the action classes");
  const Tensor mu = stack(examples, &OnlineExample::mu);
  const Tensor prev = stack(examples, &OnlineExample::prev);
  const Tensor target = stack(examples, &OnlineExample::target);
  const Tensor sigma = stack(examples, &OnlineExample::sigma);
  const Tensor prec = stack(examples, &OnlineExample::sigma_inv);
  const Tensor log_det = stack(examples, &OnlineExample::log_det_cov);
  const Tensor logits = stack(examples, &OnlineExample::logits);
  const Tensor label_logs = stack(examples, &OnlineExample::label_logs);
  const double rows = static_cast<double>(mu.rows());

  // mu * theta^T is the per-row product theta * mu_t.
  const ad::Var theta_t = ad::variable(params.theta_mu.transpose());
  const ad::Var theta_act = ad::variable(Eigen::Map<const RowVector>(params.theta_act.data(), params.theta_act.size()));

  const ad::Var pred = ad::add(ad::constant(prev), ad::matmul(ad::constant(mu), theta_t));
  const ad::Var resid = ad::sub(ad::constant(target), pred);
  const ad::Var quad = ad::sum(ad::mul(resid, ad::matvec3(ad::constant(prec), resid)));
  const ad::Var traj_fce = ad::add_scalar(ad::scale(quad, 0.5), 0.5 * log_det.sum() + 1.5 * rows * kLog2Pi);

  const double sp = config.sigma_prior;
  const double rce_const = 1.5 * rows * std::log(2.0 * M_PI * sp);
  ad::Var traj_rce;
  if (config.reverse_samples == 0) {
    // E_z ||r + sigma z||^2 = ||r||^2 + tr(sigma sigma^T).
    traj_rce = ad::add_scalar(ad::scale(ad::sum(ad::square(resid)), 0.5 / sp), sum_of_squares(sigma) / (2.0 * sp) + rce_const);
  } else {
    require(rng != nullptr, "online_loss: sampled reverse cross entropy needs a random stream");
    std::vector<ad::Var> parts;
    for (int s = 0; s < config.reverse_samples; ++s) {
      const Tensor z = rng->normal_tensor(mu.rows(), 3);
      const ad::Var noise = ad::matvec3(ad::constant(sigma), ad::constant(z));
      for (double sign : {1.0, -1.0}) {
        const ad::Var diff = ad::add(ad::sub(pred, ad::constant(target)), ad::scale(noise, sign));
        parts.push_back(ad::sum(ad::square(diff)));
      }
    }
    ad::Var total = parts.front();
    for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
    traj_rce = ad::add_scalar(ad::scale(total, 0.5 / (sp * static_cast<double>(parts.size()))), rce_const);
  }

  const ad::Var log_u = ad::log_softmax_pairs(ad::mul_row(ad::constant(logits), theta_act));
  const ad::Var act_fce = ad::neg(ad::sum(gumbel_log_density_pairs(log_u, label_logs, config.tau)));

  const ad::Var total =
      ad::add(ad::add(ad::scale(traj_fce, w.traj_forward), ad::scale(traj_rce, w.traj_reverse)), ad::scale(act_fce, w.act_forward));
  ad::backward(total);

  OnlineEvaluation out;
  out.terms.traj_forward = traj_fce.item();
  out.terms.traj_reverse = traj_rce.item();
  out.terms.act_forward = act_fce.item();
  out.terms.total = total.item();
  OnlineParams g = params;
  g.theta_mu = grad_or_zero(theta_t).transpose();
  const Tensor ga = grad_or_zero(theta_act);
  g.theta_act = Eigen::Map<const Tensor>(ga.data(), params.theta_act.rows(), 2);
  out.gradient = g.flat();
  return out;
}

}  // namespace

OnlineEvaluation online_loss(const OnlineParams& params, const std::vector<const OnlineExample*>& examples,
                             const OnlineConfig& config, Rng* rng) {
  return evaluate_terms(params, examples, config, rng, objective_weights(config.objective));
}

OnlineEvaluation online_loss(const OnlineParams& params, const OnlineExample& example, const OnlineConfig& config,
                             Rng* rng) {
  return online_loss(params, std::vector<const OnlineExample*>{&example}, config, rng);
}

OnlineStepResult online_step(OnlineParams& params, const OnlineExample& example, double step_size,
                             const OnlineConfig& config, Rng* rng) {
  require(step_size >= 0.0, "online_step: step size must be non-negative");
  OnlineStepResult r;
  OnlineEvaluation ev;
  try {
    ev = online_loss(params, example, config, rng);
  } catch (const NumericError&) {
    r.skipped = true;
    return r;
  }
  r.terms = ev.terms;
  r.grad_norm = ev.gradient.norm();
  if (!std::isfinite(ev.terms.total) || !ev.gradient.allFinite()) {
    r.skipped = true;
    return r;
  }
  if (step_size > 0.0) params.set_flat(project_norm_ball(params.flat() - step_size * ev.gradient, params.bound));
  return r;
}

double estimate_lipschitz(const std::vector<OnlineExample>& stream, int count, const OnlineConfig& config) {
  require(!stream.empty(), "estimate_lipschitz: empty stream");
  OnlineConfig exact = config;
  exact.reverse_samples = 0;
  double best = 0.0;
  const std::size_t n = std::min(stream.size(), static_cast<std::size_t>(std::max(count, 1)));
  for (std::size_t i = 0; i < n; ++i)
    best = std::max(best, OnlineBatchObjective({stream[i]}, exact).gradient_bound(config.bound));
  require(best > 0.0 && std::isfinite(best), "estimate_lipschitz: degenerate gradient bound");
  return best;
}

OnlineBatchObjective::OnlineBatchObjective(const std::vector<OnlineExample>& examples, const OnlineConfig& config)
    : count_(examples.size()), tau_(config.tau) {
  require(!examples.empty(), "OnlineBatchObjective: no examples");
  require(config.reverse_samples == 0, "OnlineBatchObjective: needs the exact reverse cross entropy (reverse_samples = 0)");
  const TermWeights w = objective_weights(config.objective);
  act_weight_ = w.act_forward;
  classes_ = static_cast<int>(examples.front().logits.cols() / 2);
  const double sp = config.sigma_prior;
  Eigen::Index action_rows = 0;
  for (const auto& ex : examples) {
    for (Eigen::Index t = 0; t < ex.mu.rows(); ++t) {
      const Eigen::Vector3d m = ex.mu.row(t).transpose();
      const Eigen::Vector3d d = (ex.target.row(t) - ex.prev.row(t)).transpose();
      const Eigen::Matrix3d prec =
          Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(Tensor(ex.sigma_inv.row(t)).data());
      const Eigen::Matrix3d weight = w.traj_forward * prec + (w.traj_reverse / sp) * Eigen::Matrix3d::Identity();
      quad_ += kron3(weight, m * m.transpose());
      const Eigen::Matrix<double, 3, 3, Eigen::RowMajor> g = weight * d * m.transpose();
      lin_ += Eigen::Map<const Eigen::Matrix<double, 9, 1>>(g.data());
      constant_ += 0.5 * d.dot(weight * d) +
                   w.traj_forward * (0.5 * ex.log_det_cov(t, 0) + 1.5 * kLog2Pi) +
                   w.traj_reverse * (Tensor(ex.sigma.row(t)).squaredNorm() / (2.0 * sp) + 1.5 * std::log(2.0 * M_PI * sp));
    }
    action_rows += ex.logits.rows();
  }
  logits_.resize(action_rows, 2 * classes_);
  label_logs_.resize(action_rows, 2 * classes_);
  Eigen::Index at = 0;
  for (const auto& ex : examples) {
    logits_.middleRows(at, ex.logits.rows()) = ex.logits;
    label_logs_.middleRows(at, ex.logits.rows()) = ex.label_logs;
    at += ex.logits.rows();
  }
}

// The trajectory gradient is affine in theta_mu, so its norm over the ball is at most
// ||Q|| r + ||l||. Each action term has derivative in (-1, 1) with respect to its
// logit difference theta_2 v_2 - theta_1 v_1, which bounds the theta_act gradient by sums of |v|.
double OnlineBatchObjective::gradient_bound(double radius) const {
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> eig(quad_, Eigen::EigenvaluesOnly);
  const double traj = eig.eigenvalues().cwiseAbs().maxCoeff() * radius + lin_.norm();
  const double act = act_weight_ * logits_.cwiseAbs().colwise().sum().norm();
  return std::hypot(traj, act);
}

OnlineBatchObjective::Value OnlineBatchObjective::evaluate(const Eigen::VectorXd& theta, bool with_hessian) const {
  const Eigen::Index n = 9 + 2 * classes_;
  require(theta.size() == n, "OnlineBatchObjective: parameter length mismatch");
  Value v;
  v.gradient = Eigen::VectorXd::Zero(n);
  if (with_hessian) v.hessian = Eigen::MatrixXd::Zero(n, n);
  const Eigen::Matrix<double, 9, 1> r = theta.head<9>();
  v.loss = 0.5 * r.dot(quad_ * r) - lin_.dot(r) + constant_;
  v.gradient.head<9>() = quad_ * r - lin_;
  if (with_hessian) v.hessian.topLeftCorner<9, 9>() = quad_;
  if (act_weight_ == 0.0) return v;

  // -log density = -log tau - th1 v1 - th2 v2 + 2 logsumexp(th_i v_i - tau log a_i) + (tau + 1) sum log a_i.
  const double wa = act_weight_;
  for (Eigen::Index row = 0; row < logits_.rows(); ++row)
    for (int c = 0; c < classes_; ++c) {
      const double th1 = theta[9 + 2 * c], th2 = theta[9 + 2 * c + 1];
      const double v1 = logits_(row, 2 * c), v2 = logits_(row, 2 * c + 1);
      const double la1 = label_logs_(row, 2 * c), la2 = label_logs_(row, 2 * c + 1);
      const double e1 = th1 * v1 - tau_ * la1, e2 = th2 * v2 - tau_ * la2;
      const double mx = std::max(e1, e2);
      const double lse = mx + std::log(std::exp(e1 - mx) + std::exp(e2 - mx));
      const double s1 = std::exp(e1 - lse), s2 = std::exp(e2 - lse);
      v.loss += wa * (-std::log(tau_) - th1 * v1 - th2 * v2 + 2.0 * lse + (tau_ + 1.0) * (la1 + la2));
      v.gradient[9 + 2 * c] += wa * (2.0 * s1 - 1.0) * v1;
      v.gradient[9 + 2 * c + 1] += wa * (2.0 * s2 - 1.0) * v2;
      if (with_hessian) {
        const double k = 2.0 * wa * s1 * s2;
        v.hessian(9 + 2 * c, 9 + 2 * c) += k * v1 * v1;
        v.hessian(9 + 2 * c + 1, 9 + 2 * c + 1) += k * v2 * v2;
        v.hessian(9 + 2 * c, 9 + 2 * c + 1) -= k * v1 * v2;
        v.hessian(9 + 2 * c + 1, 9 + 2 * c) -= k * v1 * v2;
      }
    }
  return v;
}

namespace {

// Minimiser of g.d + d.H.d / 2 subject to ||x + d|| <= bound (H positive semidefinite).
Eigen::VectorXd ball_newton_direction(const Eigen::MatrixXd& h, const Eigen::VectorXd& g, const Eigen::VectorXd& x,
                                      double bound) {
  const Eigen::Index n = g.size();
  const double ridge = 1e-12 * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
  auto solve = [&](double nu) {
    const Eigen::MatrixXd m = h + (nu + ridge) * Eigen::MatrixXd::Identity(n, n);
    return Eigen::VectorXd(m.ldlt().solve(-g - nu * x));
  };
  Eigen::VectorXd d = solve(0.0);
  if ((x + d).norm() <= bound) return d;
  double lo = 0.0, hi = 1.0;
  while ((x + solve(hi)).norm() > bound) hi *= 2.0;
  for (int i = 0; i < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++i) {
    const double mid = 0.5 * (lo + hi);
    ((x + solve(mid)).norm() > bound ? lo : hi) = mid;
  }
  return solve(hi);
}

}  // namespace

HindsightResult hindsight_optimum(const std::vector<OnlineExample>& examples, const OnlineParams& start,
                                  const OnlineConfig& config) {
  require(!examples.empty(), "hindsight_optimum: empty prefix");
  const OnlineBatchObjective objective(examples, config);
  const double n = static_cast<double>(examples.size());
  const double bound = start.bound;

  // Newton steps restricted to the ball, with backtracking on the mean loss.
  Eigen::VectorXd x = project_norm_ball(start.flat(), bound);
  OnlineBatchObjective::Value fx = objective.evaluate(x, true);
  HindsightResult res;
  for (int it = 1; it <= config.hindsight_iterations; ++it) {
    res.iterations = it;
    const Eigen::VectorXd g = fx.gradient / n;
    const double mapping = (x - project_norm_ball(x - g, bound)).norm();
    if (mapping < config.hindsight_tolerance) {
      res.converged = true;
      break;
    }
    const Eigen::VectorXd d = ball_newton_direction(fx.hessian / n, g, x, bound);
    double step = 1.0;
    OnlineBatchObjective::Value trial;
    bool moved = false;
    for (int k = 0; k < 60; ++k, step *= 0.5) {
      trial = objective.evaluate(x + step * d, true);
      if (trial.loss / n <= fx.loss / n + 1e-4 * step * g.dot(d)) {
        moved = true;
        break;
      }
    }
    if (!moved) {
      // No further decrease is representable; the current point is optimal to rounding.
      res.converged = mapping < 1e3 * config.hindsight_tolerance;
      break;
    }
    x = project_norm_ball(x + step * d, bound);
    fx = trial;
  }
  res.params = start;
  res.params.set_flat(x);
  res.loss = fx.loss;
  return res;
}

RegretRun regret_curve(const std::vector<OnlineExample>& stream, int classes, const OnlineConfig& config) {
  config.validate();
  require(!stream.empty(), "regret_curve: empty stream");
  RegretRun run;
  const OnlineParams init = OnlineParams::identity(classes, config.bound);
  run.lipschitz = estimate_lipschitz(stream, config.warmup, config);
  run.step_size = step_size_at(config, run.lipschitz, stream.size(), 1);

  OnlineParams params = init;
  params.lipschitz = run.lipschitz;
  Rng rng(config.seed);
  std::vector<double> online_losses;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const OnlineStepResult r =
        online_step(params, stream[i], step_size_at(config, run.lipschitz, stream.size(), i + 1), config, &rng);
    run.skipped += r.skipped ? 1 : 0;
    run.max_grad_norm = std::max(run.max_grad_norm, r.grad_norm);
    run.online_terms.push_back(r.terms);
    online_losses.push_back(r.skipped ? std::nan("") : r.terms.total);
  }
  run.final_params = params;
  run.hindsight = hindsight_optimum(stream, init, config);

  double cum = 0.0;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    if (std::isnan(online_losses[i])) continue;
    RegretRecord rec;
    rec.t = static_cast<int>(i + 1);
    rec.online_loss = online_losses[i];
    rec.hindsight_loss = online_loss(run.hindsight.params, stream[i], config).terms.total;
    cum += rec.online_loss - rec.hindsight_loss;
    rec.cum_regret = cum;
    rec.avg_regret = cum / static_cast<double>(rec.t);
    rec.bound = config.bound * run.lipschitz * std::sqrt(2.0 * static_cast<double>(rec.t));
    run.records.push_back(rec);
  }
  return run;
}

double regret_decay_exponent(const std::vector<RegretRecord>& records, int t_min) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto& r : records) {
    if (r.t < t_min || r.avg_regret <= 0.0) continue;
    const double x = std::log(static_cast<double>(r.t)), y = std::log(r.avg_regret);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  require(n >= 2, "regret_decay_exponent: fewer than two usable records");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

void write_regret_csv(const std::string& path, const std::vector<RegretRecord>& records) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "write_regret_csv: cannot open '" + path + "'");
  out << "t,online_loss,hindsight_loss,cum_regret,avg_regret,bound\n" << std::setprecision(12);
  for (const auto& r : records)
    out << r.t << ',' << r.online_loss << ',' << r.hindsight_loss << ',' << r.cum_regret << ',' << r.avg_regret << ','
        << r.bound << '\n';
}

StreamComparison compare_on_stream(const std::vector<OnlineExample>& stream, int classes, const OnlineConfig& config) {
  config.validate();
  require(!stream.empty(), "compare_on_stream: empty stream");
  const OnlineParams init = OnlineParams::identity(classes, config.bound);
  const double lip = estimate_lipschitz(stream, config.warmup, config);
  StreamComparison out;
  OnlineParams params = init;
  Rng frozen_rng(config.seed), online_rng(config.seed);
  const double w = 1.0 / static_cast<double>(stream.size());
  auto accumulate = [w](OnlineTerms& acc, const OnlineTerms& t) {
    acc.traj_forward += w * t.traj_forward;
    acc.traj_reverse += w * t.traj_reverse;
    acc.act_forward += w * t.act_forward;
    acc.total += w * t.total;
  };
  for (std::size_t i = 0; i < stream.size(); ++i) {
    accumulate(out.frozen, online_loss(init, stream[i], config, &frozen_rng).terms);
    const OnlineStepResult r =
        online_step(params, stream[i], step_size_at(config, lip, stream.size(), i + 1), config, &online_rng);
    require(!r.skipped, "compare_on_stream: non-finite online loss");
    accumulate(out.online, r.terms);
  }
  return out;
}

std::string to_string(ConvexityLoss k) {
  switch (k) {
    case ConvexityLoss::traj_fce: return "traj_fce";
    case ConvexityLoss::traj_rce_adj: return "traj_rce_adj";
    case ConvexityLoss::act_fce: return "act_fce";
  }
  return "?";
}

ConvexityLoss convexity_loss_from_string(const std::string& s) {
  if (s == "traj_fce") return ConvexityLoss::traj_fce;
  if (s == "traj_rce_adj") return ConvexityLoss::traj_rce_adj;
  if (s == "act_fce") return ConvexityLoss::act_fce;
  throw ContractViolation("unknown convexity loss '" + s + "' (expected traj_fce, traj_rce_adj or act_fce)");
}

nlohmann::json ConvexityReport::to_json() const {
  return {{"loss", to_string(kind)},         {"trials", trials},
          {"hessian_error", hessian_error},   {"min_eigenvalue", min_eigenvalue},
          {"chord_violations", chord_violations}, {"worst_chord_gap", worst_chord_gap},
          {"gradient_gap", gradient_gap},     {"passed", passed},
          {"detail", detail}};
}

Eigen::MatrixXd traj_fce_hessian(const OnlineExample& example) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(9, 9);
  for (Eigen::Index t = 0; t < example.mu.rows(); ++t) {
    const Eigen::Vector3d m = example.mu.row(t).transpose();
    const Eigen::Matrix3d prec =
        Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(Tensor(example.sigma_inv.row(t)).data());
    h += kron3(m * m.transpose(), prec);
  }
  return h;
}

namespace {

// Loss restricted to one block of the online parameters; `coords` are
// vec(theta_mu) in column-major order or theta_act row-major.
struct RestrictedLoss {
  ConvexityLoss kind;
  const OnlineExample* example;
  OnlineConfig config;
  int classes;

  OnlineParams params_at(const Eigen::VectorXd& coords) const {
    OnlineParams p = OnlineParams::identity(classes, 1e300);
    if (kind == ConvexityLoss::act_fce) {
      for (Eigen::Index i = 0; i < coords.size(); ++i) p.theta_act.data()[i] = coords[i];
    } else {
      for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) p.theta_mu(i, j) = coords[3 * j + i];
    }
    return p;
  }

  std::pair<double, Eigen::VectorXd> operator()(const Eigen::VectorXd& coords) const {
    const TermWeights w{kind == ConvexityLoss::traj_fce ? 1.0 : 0.0, kind == ConvexityLoss::traj_rce_adj ? 1.0 : 0.0,
                        kind == ConvexityLoss::act_fce ? 1.0 : 0.0};
    const OnlineEvaluation ev = evaluate_terms(params_at(coords), {example}, config, nullptr, w);
    const Eigen::VectorXd g = ev.gradient;
    if (kind == ConvexityLoss::act_fce) return {ev.terms.act_forward, g.tail(g.size() - 9)};
    Eigen::VectorXd gm(9);
    for (int j = 0; j < 3; ++j)
      for (int i = 0; i < 3; ++i) gm[3 * j + i] = g[3 * i + j];
    return {kind == ConvexityLoss::traj_fce ? ev.terms.traj_forward : ev.terms.traj_reverse, gm};
  }
};

// Central differences of the gradient with one Richardson refinement.
Eigen::MatrixXd fd_hessian(const RestrictedLoss& f, const Eigen::VectorXd& at, double h) {
  const Eigen::Index n = at.size();
  Eigen::MatrixXd hess(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    auto column = [&](double step) {
      Eigen::VectorXd p = at, m = at;
      p[j] += step;
      m[j] -= step;
      return Eigen::VectorXd((f(p).second - f(m).second) / (2.0 * step));
    };
    hess.col(j) = (4.0 * column(h / 2.0) - column(h)) / 3.0;
  }
  return 0.5 * (hess + hess.transpose());
}

}  // namespace

ConvexityReport verify_convexity(ConvexityLoss kind, const std::vector<OnlineExample>& examples, int trials,
                                 std::uint64_t seed) {
  require(!examples.empty(), "verify_convexity: no examples");
  require(trials >= 1, "verify_convexity: need at least one trial");
  ConvexityReport rep;
  rep.kind = kind;
  rep.trials = trials;
  rep.min_eigenvalue = std::numeric_limits<double>::infinity();
  Rng rng(seed);
  const int classes = static_cast<int>(examples.front().logits.cols() / 2);
  OnlineConfig cfg;
  cfg.objective = OnlineObjective::corrected;
  const Eigen::Index dim = kind == ConvexityLoss::act_fce ? 2 * classes : 9;

  auto random_point = [&]() {
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = rng.uniform(-2.0, 2.0);
    return v;
  };

  // Hessian and eigenvalue checks on a handful of points.
  const int hessian_points = std::min(trials, 20);
  for (int k = 0; k < hessian_points; ++k) {
    const OnlineExample& ex = examples[static_cast<std::size_t>(k) % examples.size()];
    const RestrictedLoss f{kind, &ex, cfg, classes};
    const Eigen::VectorXd at = random_point();
    const Eigen::MatrixXd h = fd_hessian(f, at, 1e-3);
    if (kind != ConvexityLoss::act_fce) {
      Eigen::MatrixXd closed = traj_fce_hessian(ex);
      if (kind == ConvexityLoss::traj_rce_adj) {
        closed.setZero();
        for (Eigen::Index t = 0; t < ex.mu.rows(); ++t) {
          const Eigen::Vector3d m = ex.mu.row(t).transpose();
          closed += kron3(m * m.transpose(), Eigen::Matrix3d::Identity() / cfg.sigma_prior);
        }
      }
      const double err = (h - closed).cwiseAbs().maxCoeff() / std::max(1.0, closed.cwiseAbs().maxCoeff());
      rep.hessian_error = std::max(rep.hessian_error, err);
    }
    const double scale = std::max(1.0, h.cwiseAbs().maxCoeff());
    const double lo = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
    rep.min_eigenvalue = std::min(rep.min_eigenvalue, lo / scale);
  }

  // Chord inequality on random triples.
  for (int k = 0; k < trials; ++k) {
    const OnlineExample& ex = examples[static_cast<std::size_t>(k) % examples.size()];
    const RestrictedLoss f{kind, &ex, cfg, classes};
    const Eigen::VectorXd a = random_point(), b = random_point();
    const double lam = rng.uniform();
    const double fa = f(a).first, fb = f(b).first, fm = f(lam * a + (1.0 - lam) * b).first;
    const double gap = (fm - (lam * fa + (1.0 - lam) * fb)) / std::max({1.0, std::abs(fa), std::abs(fb)});
    rep.worst_chord_gap = k == 0 ? gap : std::max(rep.worst_chord_gap, gap);
    if (gap > 1e-8) {
      if (rep.chord_violations == 0) rep.detail = "chord violated at trial " + std::to_string(k);
      ++rep.chord_violations;
    }
  }

  if (kind == ConvexityLoss::traj_rce_adj) {
    // Matched inputs: Sigma = sigma_prior * I, so the two gradients coincide.
    for (int k = 0; k < hessian_points; ++k) {
      OnlineExample ex = examples[static_cast<std::size_t>(k) % examples.size()];
      const double s = std::sqrt(cfg.sigma_prior);
      for (Eigen::Index t = 0; t < ex.mu.rows(); ++t) {
        ex.sigma.row(t) << s, 0, 0, 0, s, 0, 0, 0, s;
        ex.sigma_inv.row(t) << 1 / cfg.sigma_prior, 0, 0, 0, 1 / cfg.sigma_prior, 0, 0, 0, 1 / cfg.sigma_prior;
        ex.log_det_cov(t, 0) = 3.0 * std::log(cfg.sigma_prior);
      }
      const Eigen::VectorXd at = random_point();
      const RestrictedLoss fce{ConvexityLoss::traj_fce, &ex, cfg, classes};
      const RestrictedLoss rce{ConvexityLoss::traj_rce_adj, &ex, cfg, classes};
      const Eigen::VectorXd g1 = fce(at).second, g2 = rce(at).second;
      rep.gradient_gap = std::max(rep.gradient_gap, (g1 - g2).cwiseAbs().maxCoeff() / std::max(1.0, g1.cwiseAbs().maxCoeff()));
    }
  }

  const bool hess_ok = kind == ConvexityLoss::act_fce || rep.hessian_error < 1e-4;
  const bool grad_ok = kind != ConvexityLoss::traj_rce_adj || rep.gradient_gap < 1e-8;
  rep.passed = hess_ok && grad_ok && rep.min_eigenvalue >= -1e-8 && rep.chord_violations == 0;
  if (rep.detail.empty()) rep.detail = rep.passed ? "ok" : "tolerance exceeded";
  return rep;
}

}  // namespace hybridcast
