#include "hybridcast/trajectory.hpp"

#include <cmath>

#include "hybridcast/linalg.hpp"

namespace hybridcast {

namespace {

ad::Var normalized_position(const Model& model, const ad::Var& x) {
  const Tensor neg_mean = -model.pos_mean();
  return ad::mul_row(ad::add_row(x, ad::constant(neg_mean)), ad::constant(model.pos_inv_scale()));
}

ad::Var gru_input(const Model& model, const ad::Var& x, const ad::Var& prev) {
  return ad::concat_cols({normalized_position(model, x), ad::scale(x - prev, 1.0 / model.step_scale())});
}

// sigma has eigenvalues exp(eig(clipped)) >= exp(-L); only when that bound is
// below the admissible precision do the rows need an explicit check.
void check_precision(const Model& model, const ad::Var& clipped) {
  const double floor = model.config().min_precision;
  if (std::exp(-model.config().softclip_limit) >= floor) return;
  for (Eigen::Index r = 0; r < clipped.rows(); ++r) {
    const double smallest = std::exp(eig_sym3(row_as_mat3(clipped.value(), r)).values.minCoeff());
    if (smallest < floor)
      throw NumericError("sigma is numerically singular (min eigenvalue " + std::to_string(smallest) + ") in row " +
                         std::to_string(r));
  }
}

StepDistribution scale_part(const Model& model, const ad::Var& raw_s, const ad::Var& mu_hat, const ad::Var& mu) {
  StepDistribution d;
  d.mu_hat = mu_hat;
  d.mu = mu;
  d.clipped = ad::softclip3(raw_s + ad::transpose3(raw_s), model.config().softclip_limit);
  check_precision(model, d.clipped);
  d.sigma = ad::expm_sym3(d.clipped);
  d.log_det = ad::trace3(d.clipped);
  return d;
}

// Open-loop per-step Gaussians of the direct cross-entropy baseline.
std::vector<StepDistribution> open_loop_steps(const Model& model, const TrajState& s) {
  const int steps = model.dims().future_steps;
  const ad::Var out = model.traj_head(ad::concat_cols({s.h, s.ctx}));
  std::vector<StepDistribution> dists;
  dists.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    const ad::Var offset = ad::scale(ad::slice_cols(out, 12 * t, 3), model.step_scale() * (t + 1));
    dists.push_back(scale_part(model, ad::slice_cols(out, 12 * t + 3, 9), offset, s.prev + offset));
  }
  return dists;
}

ad::Var step_log_density(const ad::Var& z, const ad::Var& log_det) {
  return ad::add_scalar(ad::scale(ad::row_sum(ad::square(z)), -0.5) - log_det, -1.5 * kLog2Pi);
}

}  // namespace

TrajState warm_up(const Model& model, const Batch& batch) {
  const EpisodeDims& d = model.dims();
  TrajState s;
  s.ctx = model.traj_feat(ad::constant(batch.features));
  s.h = ad::constant(Tensor::Zero(batch.size, model.config().gru_hidden));
  ad::Var prev = ad::constant(batch.past_step(0));
  for (int i = 0; i < d.past_steps; ++i) {
    const ad::Var x = ad::constant(batch.past_step(i));
    s.h = model.gru(s.h, gru_input(model, x, prev));
    prev = x;
  }
  s.prev = prev;
  return s;
}

TrajState repeat_state(const TrajState& s, Eigen::Index k) {
  return TrajState{repeat_rows(s.h, k), repeat_rows(s.prev, k), repeat_rows(s.ctx, k)};
}

TrajState advance(const Model& model, const TrajState& s, const ad::Var& x) {
  return TrajState{model.gru(s.h, gru_input(model, x, s.prev)), x, s.ctx};
}

StepDistribution policy_step(const Model& model, const TrajState& s) {
  require(model.config().kind != ModelKind::dce, "policy_step: the open-loop baseline has no per-step policy");
  const ad::Var out = model.traj_head(ad::concat_cols({s.h, s.ctx}));
  const ad::Var mu_hat = ad::scale(ad::slice_cols(out, 0, 3), model.step_scale());
  return scale_part(model, ad::slice_cols(out, 3, 9), mu_hat, s.prev + mu_hat);
}

Rollout simulate(const Model& model, const TrajState& start, const std::vector<ad::Var>& z) {
  const int steps = model.dims().future_steps;
  require(static_cast<int>(z.size()) == steps, "simulate: expected one noise block per future step");
  Rollout r;
  r.z = z;
  std::vector<StepDistribution> open;
  if (model.config().kind == ModelKind::dce) open = open_loop_steps(model, start);
  TrajState s = start;
  ad::Var total;
  for (int t = 0; t < steps; ++t) {
    const ad::Var& zt = z[static_cast<std::size_t>(t)];
    require(zt.rows() == start.prev.rows() && zt.cols() == 3, "simulate: noise block has shape " + shape_string(zt.value()));
    StepDistribution d = open.empty() ? policy_step(model, s) : open[static_cast<std::size_t>(t)];
    const ad::Var x = d.mu + ad::matvec3(d.sigma, zt);
    const ad::Var lp = step_log_density(zt, d.log_det);
    total = t == 0 ? lp : total + lp;
    if (open.empty() && t + 1 < steps) s = advance(model, s, x);
    r.x.push_back(x);
    r.steps.push_back(std::move(d));
  }
  r.log_density = total;
  return r;
}

Rollout invert(const Model& model, const TrajState& start, const std::vector<ad::Var>& x) {
  const int steps = model.dims().future_steps;
  require(static_cast<int>(x.size()) == steps, "invert: expected one position block per future step");
  Rollout r;
  r.x = x;
  std::vector<StepDistribution> open;
  if (model.config().kind == ModelKind::dce) open = open_loop_steps(model, start);
  TrajState s = start;
  ad::Var total;
  for (int t = 0; t < steps; ++t) {
    const ad::Var& xt = x[static_cast<std::size_t>(t)];
    require(xt.rows() == start.prev.rows() && xt.cols() == 3, "invert: position block has shape " + shape_string(xt.value()));
    StepDistribution d = open.empty() ? policy_step(model, s) : open[static_cast<std::size_t>(t)];
    const ad::Var sigma_inv = ad::expm_sym3(-d.clipped);
    const ad::Var z = ad::matvec3(sigma_inv, xt - d.mu);
    const ad::Var lp = step_log_density(z, d.log_det);
    total = t == 0 ? lp : total + lp;
    if (open.empty() && t + 1 < steps) s = advance(model, s, xt);
    r.z.push_back(z);
    r.steps.push_back(std::move(d));
  }
  r.log_density = total;
  return r;
}

ad::Var forward_ce_traj(const Model& model, const Batch& batch, const std::vector<Tensor>& x) {
  std::vector<ad::Var> xs;
  xs.reserve(x.size());
  for (const auto& t : x) xs.push_back(ad::constant(t));
  const Rollout r = invert(model, warm_up(model, batch), xs);
  return ad::scale(ad::mean(r.log_density), -1.0);
}

ad::Var reverse_ce_traj(const Model& model, const Batch& batch, const std::vector<Tensor>& z, Eigen::Index k,
                        double sigma_prior, Rollout* out) {
  require(k >= 1, "reverse_ce_traj: need at least one sample");
  require(sigma_prior > 0.0, "reverse_ce_traj: sigma_prior must be positive");
  std::vector<ad::Var> zs;
  zs.reserve(z.size());
  for (const auto& t : z) zs.push_back(ad::constant(t));
  Rollout r = simulate(model, repeat_state(warm_up(model, batch), k), zs);
  ad::Var total;
  for (std::size_t t = 0; t < r.x.size(); ++t) {
    const ad::Var diff = r.x[t] - ad::constant(repeat_rows(batch.future[t], k));
    const ad::Var sq = ad::row_sum(ad::square(diff));
    total = t == 0 ? sq : total + sq;
  }
  const double constant_part = 1.5 * static_cast<double>(r.x.size()) * std::log(2.0 * M_PI * sigma_prior);
  ad::Var loss = ad::add_scalar(ad::scale(ad::mean(total), 0.5 / sigma_prior), constant_part);
  if (out) *out = std::move(r);
  return loss;
}

std::vector<Tensor> draw_noise(Eigen::Index rows, int steps, Rng& rng) {
  std::vector<Tensor> z;
  z.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) z.push_back(rng.normal_tensor(rows, 3));
  return z;
}

Tensor trajectory_of_row(const std::vector<ad::Var>& blocks, Eigen::Index r) {
  Tensor out(static_cast<Eigen::Index>(blocks.size()), 3);
  for (std::size_t t = 0; t < blocks.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = blocks[t].value().row(r);
  return out;
}

Tensor trajectory_of_row(const std::vector<Tensor>& blocks, Eigen::Index r) {
  Tensor out(static_cast<Eigen::Index>(blocks.size()), 3);
  for (std::size_t t = 0; t < blocks.size(); ++t) out.row(static_cast<Eigen::Index>(t)) = blocks[t].row(r);
  return out;
}

}  // namespace hybridcast
