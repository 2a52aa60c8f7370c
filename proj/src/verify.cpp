#include "hybridcast/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/LU>

#include "hybridcast/action.hpp"
#include "hybridcast/trajectory.hpp"

namespace hybridcast {

nlohmann::json CheckResult::to_json() const {
  return {{"suite", suite}, {"name", name}, {"value", value}, {"tolerance", tolerance}, {"passed", passed},
          {"detail", detail}};
}

namespace {

CheckResult below(std::string suite, std::string name, double value, double tolerance, std::string detail = "") {
  CheckResult r{std::move(suite), std::move(name), value, tolerance, std::isfinite(value) && value <= tolerance,
                std::move(detail)};
  return r;
}

std::vector<ad::Var> constants(const std::vector<Tensor>& blocks) {
  std::vector<ad::Var> out;
  for (const auto& b : blocks) out.push_back(ad::constant(b));
  return out;
}

std::vector<const Episode*> first_rows(const std::vector<Episode>& episodes, std::size_t n) {
  require(!episodes.empty(), "verify: need at least one episode");
  std::vector<const Episode*> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(&episodes[i % episodes.size()]);
  return out;
}

// Perturbs every trainable weight so checks do not only see the initialiser's scale.
void jitter_weights(Model& model, Rng& rng, double scale) {
  for (const auto& name : model.store().names()) {
    if (model.store().frozen(name)) continue;
    const Tensor v = model.store().get(name).value();
    model.store().restore({{name, Tensor(v + scale * rng.normal_tensor(v.rows(), v.cols()))}});
  }
}

Tensor stack_priors(const Batch& batch, const EpisodeDims& d, const LossConfig& loss) {
  Tensor out(batch.actions.rows(), batch.actions.cols());
  for (int e = 0; e < batch.size; ++e)
    out.middleRows(static_cast<Eigen::Index>(e) * d.action_steps, d.action_steps) =
        action_prior(batch.actions.middleRows(static_cast<Eigen::Index>(e) * d.action_steps, d.action_steps),
                     loss.prior_scale, loss.prior_floor);
  return out;
}

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

std::vector<CheckResult> verify_flow(const ModelConfig& config, const std::vector<Episode>& episodes,
                                     const VerifyConfig& vc) {
  require(config.kind == ModelKind::flow, "verify_flow: needs a flow model");
  Rng rng(vc.seed);
  const int steps = config.dims.future_steps;
  double worst = 0.0;
  for (int m = 0; m < vc.flow_models; ++m) {
    auto model = Model::create(config, mix_seed(vc.seed + static_cast<std::uint64_t>(m)));
    jitter_weights(*model, rng, 0.05);
    NoGradScope no_grad(model->store());
    const Batch batch = make_batch(first_rows(episodes, static_cast<std::size_t>(vc.flow_rows)), config.dims);
    const TrajState start = warm_up(*model, batch);
    const std::vector<Tensor> z = draw_noise(batch.size, steps, rng);
    const Rollout fwd = simulate(*model, start, constants(z));
    std::vector<ad::Var> x;
    for (const auto& b : fwd.x) x.push_back(ad::constant(b.value()));
    const Rollout back = invert(*model, start, x);
    for (int t = 0; t < steps; ++t) worst = std::max(worst, (back.z[t].value() - z[t]).cwiseAbs().maxCoeff());
  }
  std::vector<CheckResult> out;
  out.push_back(below("flow", "round_trip_max_error", worst, 1e-8,
                      std::to_string(vc.flow_models * vc.flow_rows) + " (z, params) draws"));

  // Finite-difference Jacobian of x = f(z) for one episode.
  auto model = Model::create(config, mix_seed(vc.seed ^ 0xf10eULL));
  jitter_weights(*model, rng, 0.05);
  NoGradScope no_grad(model->store());
  const Batch batch = make_batch(first_rows(episodes, 1), config.dims);
  const TrajState start = warm_up(*model, batch);
  const Eigen::Index n = 3 * steps;
  Eigen::VectorXd z0(n);
  for (Eigen::Index i = 0; i < n; ++i) z0[i] = rng.normal();
  auto run = [&](const Eigen::VectorXd& zv) {
    std::vector<ad::Var> blocks;
    for (int t = 0; t < steps; ++t) blocks.push_back(ad::constant(Tensor(zv.segment(3 * t, 3).transpose())));
    return simulate(*model, start, blocks);
  };
  const Rollout base = run(z0);
  double analytic = 0.0;
  for (const auto& s : base.steps) analytic += s.log_det.value()(0, 0);
  Eigen::MatrixXd jac(n, n);
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd zp = z0, zm = z0;
    zp[j] += h;
    zm[j] -= h;
    const Rollout rp = run(zp), rm = run(zm);
    for (int t = 0; t < steps; ++t)
      jac.block(3 * t, j, 3, 1) = (rp.x[t].value() - rm.x[t].value()).transpose() / (2.0 * h);
  }
  const double numeric = std::log(std::abs(jac.fullPivLu().determinant()));
  out.push_back(below("flow", "log_det_vs_finite_difference", std::abs(numeric - analytic), 1e-5,
                      "analytic " + std::to_string(analytic) + ", numeric " + std::to_string(numeric)));
  return out;
}

std::vector<CheckResult> verify_gradients(const ModelConfig& config, const std::vector<Episode>& episodes,
                                          const LossConfig& loss, const VerifyConfig& vc) {
  require(config.kind == ModelKind::flow, "verify_gradients: needs a flow model");
  const EpisodeDims& d = config.dims;
  const Batch batch = make_batch(first_rows(episodes, 3), d);
  const double n = static_cast<double>(batch.size);
  const Eigen::Index k = 2;

  using Term = std::function<ad::Var(const Model&)>;
  Rng noise(vc.seed ^ 0x9e3779b9ULL);
  const std::vector<Tensor> z = draw_noise(batch.size * k, d.future_steps, noise);
  const Tensor gumbel = noise.gumbel_tensor(batch.size * d.action_steps, 2 * d.action_classes);
  const Tensor prior = stack_priors(batch, d, loss);
  const std::vector<std::pair<std::string, Term>> terms = {
      {"traj_forward_ce", [&](const Model& m) { return forward_ce_traj(m, batch, batch.future); }},
      {"traj_reverse_ce", [&](const Model& m) { return reverse_ce_traj(m, batch, z, k, loss.sigma_prior); }},
      {"act_forward_ce",
       [&](const Model& m) {
         return forward_ce_action(action_logits(m, batch.features, action_windows(m, batch, batch.future, 1)),
                                  batch.actions, loss.tau, loss.label_eps, n);
       }},
      {"act_reverse_ce",
       [&](const Model& m) {
         const ad::Var logits = action_logits(m, batch.features, action_windows(m, batch, batch.future, 1));
         return reverse_ce_action(relaxed_sample(ad::log_softmax_pairs(logits), gumbel, loss.tau), prior,
                                  loss.prior_floor, n);
       }},
  };

  std::vector<CheckResult> out;
  Rng rng(vc.seed);
  for (const auto& [name, term] : terms) {
    double worst = 0.0;
    for (int p = 0; p < vc.gradient_points; ++p) {
      auto model = Model::create(config, mix_seed(vc.seed + 1000 + static_cast<std::uint64_t>(p)));
      jitter_weights(*model, rng, 0.05);
      ParamStore& store = model->store();
      store.zero_grad();
      ad::backward(term(*model));
      const Eigen::VectorXd theta = store.flat_values(), grad = store.flat_grads();
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(theta.size());
      // Random direction restricted to trainable entries.
      Eigen::Index offset = 0;
      for (const auto& pname : store.names()) {
        const Eigen::Index size = store.get(pname).value().size();
        if (!store.frozen(pname))
          for (Eigen::Index i = 0; i < size; ++i) dir[offset + i] = rng.normal();
        offset += size;
      }
      dir.normalize();
      NoGradScope no_grad(store);
      store.set_flat_values(theta + vc.fd_step * dir);
      const double fp = term(*model).item();
      store.set_flat_values(theta - vc.fd_step * dir);
      const double fm = term(*model).item();
      store.set_flat_values(theta);
      worst = std::max(worst, relative_error((fp - fm) / (2.0 * vc.fd_step), grad.dot(dir)));
    }
    out.push_back(below("gradient", name, worst, 1e-4, std::to_string(vc.gradient_points) + " parameter points"));
  }

  // Online objective with respect to the linear layer.
  auto model = Model::create(config, mix_seed(vc.seed + 77));
  OnlineConfig oc;
  oc.tau = loss.tau;
  oc.label_eps = loss.label_eps;
  oc.sigma_prior = loss.sigma_prior;
  const auto examples = build_online_examples(*model, std::vector<Episode>(episodes.begin(), episodes.begin() + 1), oc);
  double worst = 0.0;
  for (int p = 0; p < vc.gradient_points; ++p) {
    OnlineParams params = OnlineParams::identity(d.action_classes, oc.bound);
    Eigen::VectorXd theta = params.flat();
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.3 * rng.normal();
    params.set_flat(theta);
    const Eigen::VectorXd grad = online_loss(params, examples.front(), oc).gradient;
    Eigen::VectorXd dir(theta.size());
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = rng.normal();
    dir.normalize();
    params.set_flat(theta + vc.fd_step * dir);
    const double fp = online_loss(params, examples.front(), oc).terms.total;
    params.set_flat(theta - vc.fd_step * dir);
    const double fm = online_loss(params, examples.front(), oc).terms.total;
    worst = std::max(worst, relative_error((fp - fm) / (2.0 * vc.fd_step), grad.dot(dir)));
  }
  out.push_back(below("gradient", "online_objective", worst, 1e-4, std::to_string(vc.gradient_points) + " points"));
  return out;
}

std::vector<CheckResult> verify_normalization(const VerifyConfig&) {
  // Integrate over y = logit(a2) so both ends are smooth and decay exponentially.
  std::vector<CheckResult> out;
  for (double tau : {0.5, 1.0})
    for (double u2 : {0.3, 0.7}) {
      const int intervals = 20000;
      const double lo = -34.0, hi = 34.0, h = (hi - lo) / intervals;
      auto f = [&](double y) {
        const double a2 = 1.0 / (1.0 + std::exp(-y)), a1 = 1.0 / (1.0 + std::exp(y));
        return std::exp(gumbel_softmax_log_density(a1, a2, 1.0 - u2, u2, tau)) * a1 * a2;
      };
      double total = f(lo) + f(hi);
      for (int i = 1; i < intervals; ++i) total += (i % 2 ? 4.0 : 2.0) * f(lo + i * h);
      total *= h / 3.0;
      out.push_back(below("normalization", "gumbel_density_tau" + format_number(tau) + "_u" + format_number(u2),
                          std::abs(total - 1.0), 1e-3, "integral " + std::to_string(total)));
    }
  return out;
}

std::vector<CheckResult> verify_online(Model& model, const std::vector<Episode>& episodes, const OnlineConfig& oc,
                                       const VerifyConfig& vc) {
  std::vector<CheckResult> out;
  const auto examples = build_online_examples(model, episodes, oc);
  const std::vector<OnlineExample> few(examples.begin(), examples.begin() + std::min<std::size_t>(examples.size(), 8));
  for (ConvexityLoss kind : {ConvexityLoss::traj_fce, ConvexityLoss::traj_rce_adj, ConvexityLoss::act_fce}) {
    const ConvexityReport r = verify_convexity(kind, few, vc.convexity_trials, vc.seed);
    CheckResult c{"convexity", to_string(kind), r.min_eigenvalue, -1e-8, r.passed, r.to_json().dump()};
    out.push_back(c);
  }
  const std::uint64_t frozen_before = model.store().hash();
  const std::vector<OnlineExample> stream(examples.begin(),
                                          examples.begin() + std::min<std::size_t>(examples.size(), vc.regret_stream));
  const RegretRun run = regret_curve(stream, model.dims().action_classes, oc);
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& rec : run.records) worst = std::max(worst, rec.cum_regret - rec.bound);
  out.push_back(below("regret", "cumulative_regret_below_bound", worst, 0.0,
                      std::to_string(run.records.size()) + " steps, max of R_t - B L sqrt(2t)"));
  out.push_back(below("regret", "frozen_parameters_unchanged", model.store().hash() == frozen_before ? 0.0 : 1.0, 0.0));
  return out;
}

}  // namespace hybridcast
