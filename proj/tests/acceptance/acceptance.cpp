// Acceptance run: one PASS/FAIL line per criterion, plus acceptance_results.json
// in the working directory. Every reference value is recomputed here from first
// principles (finite differences, quadrature, closed forms) rather than read
// back from the library.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <nlohmann/json.hpp>

#include "hybridcast/action.hpp"
#include "hybridcast/evaluate.hpp"
#include "hybridcast/metrics.hpp"
#include "hybridcast/online.hpp"
#include "hybridcast/training.hpp"
#include "hybridcast/trajectory.hpp"
#include "hybridcast/world.hpp"

using namespace hybridcast;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  int id = 0;
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

std::vector<Outcome> outcomes;
json results = json::object();

void report(int id, std::string title, bool passed, std::string detail, double seconds) {
  Outcome o{id, std::move(title), passed, std::move(detail), seconds};
  std::printf("[%s] criterion %d %s: %s (%.1f s)\n", passed ? "PASS" : "FAIL", id, o.title.c_str(), o.detail.c_str(),
              seconds);
  std::fflush(stdout);
  outcomes.push_back(o);
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// ---------------------------------------------------------------------------
// Desk-scale setup shared by criteria 4 to 9.

struct Desk {
  WorldConfig world;
  std::vector<Episode> train, validation, test;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train_config;
  EvalConfig eval;
};

Desk make_desk() {
  Desk d;
  d.world = WorldConfig::defaults();
  d.world.video_count = 40;
  d.world.seed = 7;
  const auto all = generate_dataset(d.world, 1000);
  const DatasetSplit s = split_dataset(all, {0.7, 0.1, 0.2}, d.world.dims.action_classes, 3);
  d.train = select_episodes(all, s.train);
  d.validation = select_episodes(all, s.validation);
  d.test = select_episodes(all, s.test);
  d.model.dims = d.world.dims;
  d.model.gru_hidden = 32;
  d.model.traj_mlp = 64;
  d.model.feat_hidden = 32;
  d.model.act_traj_mlp = 32;
  d.model.joint_mlp = 64;
  d.train_config.learning_rate = 1e-3;
  d.train_config.epochs = 15;
  d.train_config.pretrain_epochs = 2;
  d.train_config.validation_limit = 100;
  d.eval.samples = 12;
  d.eval.seed = 5;
  return d;
}

std::unique_ptr<Model> train_model(const Desk& d, TrainMode mode, std::uint64_t seed,
                                   const std::vector<Episode>& train) {
  TrainConfig tc = d.train_config;
  tc.mode = mode;
  tc.seed = seed;
  TrainResult r = batch_train(train, d.validation, model_config_for(mode, d.model), tc, d.loss);
  if (r.diverged) std::printf("  note: %s seed %llu diverged: %s\n", to_string(mode).c_str(),
                              static_cast<unsigned long long>(seed), r.message.c_str());
  return std::move(r.model);
}

// Random parameter point: fresh initialisation plus Gaussian jitter on every trainable weight.
std::unique_ptr<Model> random_model(const ModelConfig& config, const std::vector<Episode>& fit, std::uint64_t seed,
                                    Rng& rng) {
  auto m = Model::create(config, seed);
  m->fit_normalization(fit);
  for (const auto& name : m->store().names()) {
    if (m->store().frozen(name)) continue;
    const Tensor v = m->store().get(name).value();
    m->store().restore({{name, Tensor(v + 0.05 * rng.normal_tensor(v.rows(), v.cols()))}});
  }
  return m;
}

std::vector<ad::Var> as_constants(const std::vector<Tensor>& blocks) {
  std::vector<ad::Var> out;
  for (const auto& b : blocks) out.push_back(ad::constant(b));
  return out;
}

// ---------------------------------------------------------------------------
// Criterion 1: change of variables.

void criterion_flow(const Desk& d) {
  const auto t0 = Clock::now();
  Rng rng(101);
  const int steps = d.model.dims.future_steps;
  double worst_round_trip = 0.0, worst_density = 0.0;
  int draws = 0;
  for (int m = 0; m < 50; ++m) {
    auto model = random_model(d.model, d.train, 1000 + static_cast<std::uint64_t>(m), rng);
    NoGradScope no_grad(model->store());
    std::vector<const Episode*> rows;
    for (int r = 0; r < 20; ++r) rows.push_back(&d.train[static_cast<std::size_t>((m * 20 + r) % d.train.size())]);
    const Batch batch = make_batch(rows, d.model.dims);
    const TrajState start = warm_up(*model, batch);
    const std::vector<Tensor> z = draw_noise(batch.size, steps, rng);
    const Rollout fwd = simulate(*model, start, as_constants(z));
    std::vector<Tensor> x;
    for (const auto& b : fwd.x) x.push_back(b.value());
    const Rollout back = invert(*model, start, as_constants(x));
    for (int t = 0; t < steps; ++t) worst_round_trip = std::max(worst_round_trip, (back.z[t].value() - z[t]).cwiseAbs().maxCoeff());
    // log q(x) = sum_t log N(z_t; 0, I) - log |det d x / d z|, with the Jacobian from the per-step scales.
    for (int r = 0; r < batch.size; ++r) {
      double expected = 0.0;
      for (int t = 0; t < steps; ++t) {
        const Tensor zt = back.z[t].value().row(r);
        Eigen::Matrix3d sigma;
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j) sigma(i, j) = back.steps[t].sigma.value()(r, 3 * i + j);
        expected += -0.5 * zt.squaredNorm() - 1.5 * kLog2Pi - std::log(std::abs(sigma.determinant()));
      }
      worst_density = std::max(worst_density, rel_err(expected, back.log_density.value()(r, 0)));
    }
    draws += batch.size;
  }

  // Full Jacobian of the map z -> x by central differences, for several models and episodes.
  double worst_logdet = 0.0;
  const Eigen::Index n = 3 * steps;
  for (int m = 0; m < 4; ++m) {
    auto model = random_model(d.model, d.train, 5000 + static_cast<std::uint64_t>(m), rng);
    NoGradScope no_grad(model->store());
    const Batch batch = make_batch(std::vector<const Episode*>{&d.train[static_cast<std::size_t>(37 * m)]}, d.model.dims);
    const TrajState start = warm_up(*model, batch);
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
      for (int t = 0; t < steps; ++t) jac.block(3 * t, j, 3, 1) = (rp.x[t].value() - rm.x[t].value()).transpose() / (2.0 * h);
    }
    const double numeric = std::log(std::abs(jac.fullPivLu().determinant()));
    worst_logdet = std::max(worst_logdet, std::abs(numeric - analytic));
  }
  const double secs = since(t0);
  const bool ok = worst_round_trip < 1e-8 && worst_logdet < 1e-5 && worst_density < 1e-10 && secs < 60.0;
  results["1"] = {{"draws", draws}, {"round_trip_max_error", worst_round_trip}, {"logdet_abs_error", worst_logdet},
                  {"log_density_rel_error", worst_density}, {"seconds", secs}};
  report(1, "flow exactness", ok,
         "round trip " + fmt(worst_round_trip, 3) + " over " + std::to_string(draws) + " draws (< 1e-8), log-det vs FD Jacobian " +
             fmt(worst_logdet, 3) + " (< 1e-5), density identity " + fmt(worst_density, 3),
         secs);
}

// ---------------------------------------------------------------------------
// Criterion 2: gradients of the five loss terms.

Tensor stacked_prior(const Batch& batch, const EpisodeDims& dims, const LossConfig& loss) {
  Tensor out(batch.actions.rows(), batch.actions.cols());
  for (int e = 0; e < batch.size; ++e)
    out.middleRows(static_cast<Eigen::Index>(e) * dims.action_steps, dims.action_steps) = action_prior(
        batch.actions.middleRows(static_cast<Eigen::Index>(e) * dims.action_steps, dims.action_steps), loss.prior_scale,
        loss.prior_floor);
  return out;
}

// Independent value of the online objective's three terms for one example.
OnlineTerms online_terms_oracle(const OnlineParams& p, const OnlineExample& ex, const OnlineConfig& oc) {
  OnlineTerms t;
  const double sp = oc.sigma_prior;
  for (Eigen::Index s = 0; s < ex.mu.rows(); ++s) {
    const Eigen::Vector3d mu = ex.mu.row(s).transpose(), prev = ex.prev.row(s).transpose(),
                          target = ex.target.row(s).transpose();
    Eigen::Matrix3d sigma;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) sigma(i, j) = ex.sigma(s, 3 * i + j);
    const Eigen::Matrix3d cov = sigma * sigma.transpose();
    const Eigen::Vector3d r = target - prev - p.theta_mu * mu;
    t.traj_forward += 0.5 * r.dot(cov.ldlt().solve(r)) + 0.5 * std::log(cov.determinant()) + 1.5 * std::log(2 * M_PI);
    // E_z |prev + theta mu + sigma z - target|^2 = |r|^2 + tr(cov).
    t.traj_reverse += (r.squaredNorm() + cov.trace()) / (2.0 * sp) + 1.5 * std::log(2 * M_PI * sp);
  }
  const Eigen::Index classes = ex.logits.cols() / 2;
  for (Eigen::Index s = 0; s < ex.logits.rows(); ++s)
    for (Eigen::Index c = 0; c < classes; ++c) {
      const double l1 = p.theta_act(c, 0) * ex.logits(s, 2 * c), l2 = p.theta_act(c, 1) * ex.logits(s, 2 * c + 1);
      const double m = std::max(l1, l2);
      const double lse = m + std::log(std::exp(l1 - m) + std::exp(l2 - m));
      const double u1 = std::exp(l1 - lse), u2 = std::exp(l2 - lse);
      const double a1 = std::exp(ex.label_logs(s, 2 * c)), a2 = std::exp(ex.label_logs(s, 2 * c + 1));
      // Two-category Concrete density in a2, written out directly.
      const double tau = oc.tau;
      const double num = tau * u1 * u2 * std::pow(a1, -tau - 1) * std::pow(a2, -tau - 1);
      const double den = std::pow(u1 * std::pow(a1, -tau) + u2 * std::pow(a2, -tau), 2);
      t.act_forward -= std::log(num / den);
    }
  return t;
}

void criterion_gradients(const Desk& d) {
  const auto t0 = Clock::now();
  const EpisodeDims& dims = d.model.dims;
  const Batch batch = make_batch(std::vector<const Episode*>{&d.train[3], &d.train[150], &d.train[420]}, dims);
  const double n = batch.size;
  const Eigen::Index k = 2;
  Rng noise(202);
  const std::vector<Tensor> z = draw_noise(batch.size * k, dims.future_steps, noise);
  const Tensor gumbel = noise.gumbel_tensor(batch.size * dims.action_steps, 2 * dims.action_classes);
  const Tensor prior = stacked_prior(batch, dims, d.loss);
  const LossConfig& lc = d.loss;

  using Term = std::function<ad::Var(const Model&)>;
  const std::vector<std::pair<std::string, Term>> terms = {
      {"traj_forward_ce", [&](const Model& m) { return forward_ce_traj(m, batch, batch.future); }},
      {"traj_reverse_ce", [&](const Model& m) { return reverse_ce_traj(m, batch, z, k, lc.sigma_prior); }},
      {"act_forward_ce",
       [&](const Model& m) {
         return forward_ce_action(action_logits(m, batch.features, action_windows(m, batch, batch.future, 1)),
                                  batch.actions, lc.tau, lc.label_eps, n);
       }},
      {"act_reverse_ce",
       [&](const Model& m) {
         const ad::Var logits = action_logits(m, batch.features, action_windows(m, batch, batch.future, 1));
         return reverse_ce_action(relaxed_sample(ad::log_softmax_pairs(logits), gumbel, lc.tau), prior, lc.prior_floor, n);
       }},
  };

  Rng rng(203);
  json detail = json::object();
  double overall = 0.0;
  std::string text;
  for (const auto& [name, term] : terms) {
    double worst = 0.0;
    for (int p = 0; p < 20; ++p) {
      auto model = random_model(d.model, d.train, 7000 + static_cast<std::uint64_t>(p), rng);
      ParamStore& store = model->store();
      store.zero_grad();
      ad::backward(term(*model));
      const Eigen::VectorXd theta = store.flat_values(), grad = store.flat_grads();
      Eigen::VectorXd dir = Eigen::VectorXd::Zero(theta.size());
      Eigen::Index offset = 0;
      for (const auto& pname : store.names()) {
        const Eigen::Index size = store.get(pname).value().size();
        if (!store.frozen(pname))
          for (Eigen::Index i = 0; i < size; ++i) dir[offset + i] = rng.normal();
        offset += size;
      }
      dir.normalize();
      NoGradScope no_grad(store);
      const double h = 1e-5;
      store.set_flat_values(theta + h * dir);
      const double fp = term(*model).item();
      store.set_flat_values(theta - h * dir);
      const double fm = term(*model).item();
      store.set_flat_values(theta);
      worst = std::max(worst, rel_err((fp - fm) / (2.0 * h), grad.dot(dir)));
    }
    detail[name] = worst;
    overall = std::max(overall, worst);
    text += name + " " + fmt(worst, 2) + ", ";
  }

  // Online objective of the fine-tuned linear layer, exact and sampled reverse expectation.
  auto model = random_model(d.model, d.train, 7777, rng);
  OnlineConfig oc;
  oc.tau = lc.tau;
  oc.label_eps = lc.label_eps;
  oc.sigma_prior = lc.sigma_prior;
  const auto examples = build_online_examples(*model, std::vector<Episode>(d.train.begin(), d.train.begin() + 4), oc);
  double worst_online = 0.0, worst_oracle = 0.0;
  for (int p = 0; p < 20; ++p) {
    const OnlineExample& ex = examples[static_cast<std::size_t>(p % 4)];
    OnlineConfig cfg = oc;
    cfg.reverse_samples = p % 2 ? 3 : 0;
    OnlineParams params = OnlineParams::identity(dims.action_classes, oc.bound);
    Eigen::VectorXd theta = params.flat();
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.3 * rng.normal();
    params.set_flat(theta);
    auto eval = [&](const Eigen::VectorXd& th) {
      OnlineParams q = params;
      q.set_flat(th);
      Rng r(99);  // same antithetic draws on both sides
      return online_loss(q, ex, cfg, &r);
    };
    const OnlineEvaluation base = eval(theta);
    if (cfg.reverse_samples == 0) {
      const OnlineTerms oracle = online_terms_oracle(params, ex, cfg);
      worst_oracle = std::max({worst_oracle, rel_err(oracle.traj_forward, base.terms.traj_forward),
                               rel_err(oracle.traj_reverse, base.terms.traj_reverse),
                               rel_err(oracle.act_forward, base.terms.act_forward)});
    }
    Eigen::VectorXd dir(theta.size());
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = rng.normal();
    dir.normalize();
    const double h = 1e-5;
    const double fd = (eval(theta + h * dir).terms.total - eval(theta - h * dir).terms.total) / (2.0 * h);
    worst_online = std::max(worst_online, rel_err(fd, base.gradient.dot(dir)));
  }
  detail["online_objective"] = worst_online;
  detail["online_value_oracle"] = worst_oracle;
  overall = std::max(overall, worst_online);
  const double secs = since(t0);
  detail["seconds"] = secs;
  results["2"] = detail;
  report(2, "gradient suite", overall < 1e-4 && worst_oracle < 1e-10 && secs < 300.0,
         text + "online objective " + fmt(worst_online, 2) + " (all < 1e-4), online term values vs oracle " +
             fmt(worst_oracle, 2),
         secs);
}

// ---------------------------------------------------------------------------
// Criterion 3: Gumbel-Softmax density, sampler and hardening.

void criterion_gumbel() {
  const auto t0 = Clock::now();
  double worst_integral = 0.0;
  double worst_p = 1.0, worst_hard = 0.0;
  json detail = json::object();
  Rng rng(303);
  for (double tau : {0.5, 1.0})
    for (double u2 : {0.3, 0.7}) {
      const double u1 = 1.0 - u2;
      // Integrate over y = logit(a2): smooth, exponentially decaying at both ends, and a1 stays accurate.
      auto density = [&](double y) {
        const double a2 = 1.0 / (1.0 + std::exp(-y)), a1 = 1.0 / (1.0 + std::exp(y));
        return std::exp(gumbel_softmax_log_density(a1, a2, u1, u2, tau)) * a1 * a2;
      };
      const double integral = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, -34.0, 34.0, 15, 1e-12);
      worst_integral = std::max(worst_integral, std::abs(integral - 1.0));

      // Sampler: a2 <= x  iff  g2 - g1 <= tau logit(x) - log(u2 / u1), and g2 - g1 is standard logistic.
      const Eigen::Index draws = 1000000;
      Tensor u(draws, 2);
      u.col(0).setConstant(u1);
      u.col(1).setConstant(u2);
      const Tensor a = relaxed_sample(u, rng.gumbel_tensor(draws, 2), tau);
      const int bins = 50;
      std::vector<double> edges;  // equiprobable bins under the exact CDF
      for (int b = 1; b < bins; ++b) {
        const double p = static_cast<double>(b) / bins;
        const double y = (std::log(p / (1 - p)) + std::log(u2 / u1)) / tau;
        edges.push_back(1.0 / (1.0 + std::exp(-y)));
      }
      std::vector<double> counts(bins, 0.0);
      for (Eigen::Index i = 0; i < draws; ++i)
        counts[static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), a(i, 1)) - edges.begin())] += 1;
      const double expected = static_cast<double>(draws) / bins;
      double stat = 0.0;
      for (double c : counts) stat += (c - expected) * (c - expected) / expected;
      const double p_value = boost::math::cdf(boost::math::complement(boost::math::chi_squared(bins - 1), stat));
      worst_p = std::min(worst_p, p_value);

      const Tensor hard = harden(relaxed_sample(u, rng.gumbel_tensor(draws, 2), 0.01));
      const double freq = hard.mean();
      worst_hard = std::max(worst_hard, std::abs(freq - u2));
      detail["tau" + fmt(tau) + "_u" + fmt(u2)] = {{"integral", integral}, {"chi2", stat}, {"p_value", p_value},
                                                  {"hard_frequency", freq}};
    }
  const double secs = since(t0);
  detail["seconds"] = secs;
  results["3"] = detail;
  report(3, "Gumbel-Softmax correctness", worst_integral < 1e-3 && worst_p > 0.01 && worst_hard < 0.02,
         "max |integral - 1| " + fmt(worst_integral, 3) + " (< 1e-3), min chi2 p-value " + fmt(worst_p, 3) +
             " (> 0.01, 1e6 draws x 4), max |hard freq - u| " + fmt(worst_hard, 3) + " (< 0.02)",
         secs);
}

// ---------------------------------------------------------------------------
// Criterion 4: convexity of the online losses.

void criterion_convexity(const std::vector<OnlineExample>& examples, const OnlineConfig& oc, int classes) {
  const auto t0 = Clock::now();
  const OnlineParams base = OnlineParams::identity(classes, oc.bound);

  // Term values as functions of the nine theta_mu entries (row-major).
  auto term_at = [&](const OnlineExample& ex, const Eigen::Matrix<double, 9, 1>& v, bool reverse) {
    OnlineParams p = base;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) p.theta_mu(i, j) = v[3 * i + j];
    const OnlineTerms t = online_loss(p, ex, oc).terms;
    return reverse ? t.traj_reverse : t.traj_forward;
  };
  // The forward CE is exactly quadratic in theta_mu, so a wide central stencil has no truncation error.
  auto fd_hessian = [&](const OnlineExample& ex, bool reverse) {
    const double h = 0.05;
    Eigen::Matrix<double, 9, 1> v0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) v0[3 * i + j] = base.theta_mu(i, j);
    Eigen::Matrix<double, 9, 9> hess;
    for (int a = 0; a < 9; ++a)
      for (int b = 0; b < 9; ++b) {
        Eigen::Matrix<double, 9, 1> pp = v0, pm = v0, mp = v0, mm = v0;
        pp[a] += h, pp[b] += h;
        pm[a] += h, pm[b] -= h;
        mp[a] -= h, mp[b] += h;
        mm[a] -= h, mm[b] -= h;
        hess(a, b) = (term_at(ex, pp, reverse) - term_at(ex, pm, reverse) - term_at(ex, mp, reverse) +
                      term_at(ex, mm, reverse)) /
                     (4.0 * h * h);
      }
    return hess;
  };
  double worst_hess = 0.0, worst_hess_abs = 0.0, min_eig = std::numeric_limits<double>::infinity();
  const std::size_t hess_examples = std::min<std::size_t>(examples.size(), 40);
  for (std::size_t e = 0; e < hess_examples; ++e) {
    const OnlineExample& ex = examples[e];
    // Row-major vec(theta): H[3i+j][3k+l] = P_ik mu_j mu_l, i.e. P (x) mu mu^T, which is
    // mu mu^T (x) Sigma^{-1} in the column-major convention.
    Eigen::Matrix<double, 9, 9> closed = Eigen::Matrix<double, 9, 9>::Zero();
    for (Eigen::Index t = 0; t < ex.mu.rows(); ++t) {
      Eigen::Matrix3d sigma;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) sigma(i, j) = ex.sigma(t, 3 * i + j);
      const Eigen::Matrix3d prec = (sigma * sigma.transpose()).inverse();
      const Eigen::Vector3d mu = ex.mu.row(t).transpose();
      const Eigen::Matrix3d mm = mu * mu.transpose();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 3; ++k)
            for (int l = 0; l < 3; ++l) closed(3 * i + j, 3 * k + l) += prec(i, k) * mm(j, l);
    }
    const Eigen::Matrix<double, 9, 9> fd = fd_hessian(ex, false);
    const double scale = std::max(1.0, closed.cwiseAbs().maxCoeff());
    worst_hess_abs = std::max(worst_hess_abs, (fd - closed).cwiseAbs().maxCoeff());
    worst_hess = std::max(worst_hess, (fd - closed).cwiseAbs().maxCoeff() / scale);
    const Eigen::Matrix<double, 9, 9> sym = 0.5 * (fd + fd.transpose());
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>>(sym).eigenvalues().minCoeff() / scale);
    const Eigen::Matrix<double, 9, 9> rev = fd_hessian(ex, true);
    min_eig = std::min(min_eig, Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>>(0.5 * (rev + rev.transpose()))
                                        .eigenvalues()
                                        .minCoeff() /
                                    std::max(1.0, rev.cwiseAbs().maxCoeff()));
  }

  // Chord test of the action forward CE in theta_act.
  Rng rng(404);
  int violations = 0;
  double worst_gap = -std::numeric_limits<double>::infinity();
  auto act_at = [&](const OnlineExample& ex, const Tensor& theta_act) {
    OnlineParams p = base;
    p.theta_act = theta_act;
    return online_loss(p, ex, oc).terms.act_forward;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const OnlineExample& ex = examples[rng.index(examples.size())];
    const Tensor a = base.theta_act + 1.5 * rng.normal_tensor(classes, 2);
    const Tensor b = base.theta_act + 1.5 * rng.normal_tensor(classes, 2);
    const double lam = rng.uniform();
    const double fa = act_at(ex, a), fb = act_at(ex, b);
    const double gap = act_at(ex, Tensor(lam * a + (1 - lam) * b)) - (lam * fa + (1 - lam) * fb);
    worst_gap = std::max(worst_gap, gap);
    if (gap > 1e-8) ++violations;
  }

  // Matched inputs: Sigma_t = sigma_prior I. Then the adjusted reverse CE and the forward CE
  // have the same gradient in theta_mu. Both terms are quadratic, so central differences are exact.
  double worst_match = 0.0;
  for (std::size_t e = 0; e < std::min<std::size_t>(examples.size(), 40); ++e) {
    OnlineExample ex = examples[e];
    const double s = std::sqrt(oc.sigma_prior);
    for (Eigen::Index t = 0; t < ex.mu.rows(); ++t) {
      ex.sigma.row(t) << s, 0, 0, 0, s, 0, 0, 0, s;
      ex.sigma_inv.row(t) << 1 / oc.sigma_prior, 0, 0, 0, 1 / oc.sigma_prior, 0, 0, 0, 1 / oc.sigma_prior;
      ex.log_det_cov(t, 0) = 3.0 * std::log(oc.sigma_prior);
    }
    Eigen::Matrix<double, 9, 1> v0;
    for (int i = 0; i < 9; ++i) v0[i] = (i % 4 == 0 ? 1.0 : 0.0) + 0.2 * rng.normal();
    const double h = 1e-2;
    for (int i = 0; i < 9; ++i) {
      Eigen::Matrix<double, 9, 1> vp = v0, vm = v0;
      vp[i] += h;
      vm[i] -= h;
      const double gf = (term_at(ex, vp, false) - term_at(ex, vm, false)) / (2 * h);
      const double gr = (term_at(ex, vp, true) - term_at(ex, vm, true)) / (2 * h);
      worst_match = std::max(worst_match, std::abs(gf - gr));
    }
  }
  const double secs = since(t0);
  const bool ok = worst_hess < 1e-4 && min_eig >= -1e-8 && violations == 0 && worst_match < 1e-8;
  results["4"] = {{"hessian_rel_error", worst_hess},  {"hessian_abs_error", worst_hess_abs},
                  {"min_rel_eigenvalue", min_eig},     {"chord_violations", violations},
                  {"worst_chord_gap", worst_gap},      {"matched_gradient_gap", worst_match},
                  {"hessian_examples", hess_examples}, {"seconds", secs}};
  report(4, "convexity of the online losses", ok,
         "Hessian vs mu mu^T (x) Sigma^-1 rel " + fmt(worst_hess, 3) + " (abs " + fmt(worst_hess_abs, 3) +
             ", < 1e-4), min eigenvalue / max|H| " + fmt(min_eig, 3) + " (>= -1e-8), chord violations " +
             std::to_string(violations) + "/1000 (worst gap " + fmt(worst_gap, 3) + "), matched gradient gap " +
             fmt(worst_match, 3) + " (< 1e-8)",
         secs);
}

// ---------------------------------------------------------------------------
// Criterion 5: regret on a fresh stream.

void criterion_regret(const Desk& d, Model& base) {
  const auto t0 = Clock::now();
  WorldConfig w = d.world;
  w.seed = 2024;  // new videos, same dynamics
  const auto episodes = generate_dataset(w, 2000);
  OnlineConfig oc;
  oc.tau = d.loss.tau;
  oc.label_eps = d.loss.label_eps;
  oc.sigma_prior = d.loss.sigma_prior;
  oc.schedule = StepSchedule::anytime;
  const std::uint64_t frozen = base.store().hash();
  const auto stream = build_online_examples(base, episodes, oc);
  const RegretRun run = regret_curve(stream, d.model.dims.action_classes, oc);

  // Regret recomputed from per-step losses: online loss before each update minus the
  // loss of the fixed comparator, which must be no worse than any other fixed point tried.
  double cum = 0.0, worst_excess = -std::numeric_limits<double>::infinity();
  std::map<int, double> avg;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    const double online = run.online_terms[i].total;
    const double fixed = online_loss(run.hindsight.params, stream[i], oc).terms.total;
    cum += online - fixed;
    const int t = static_cast<int>(i + 1);
    worst_excess = std::max(worst_excess, cum - oc.bound * run.lipschitz * std::sqrt(2.0 * t));
    avg[t] = cum / t;
  }
  std::vector<const OnlineExample*> all;
  for (const auto& e : stream) all.push_back(&e);
  const double hindsight_total = online_loss(run.hindsight.params, all, oc).terms.total;
  const double final_total = online_loss(run.final_params, all, oc).terms.total;
  const double identity_total = online_loss(OnlineParams::identity(d.model.dims.action_classes, oc.bound), all, oc).terms.total;
  const bool comparator_ok = hindsight_total <= final_total + 1e-6 * std::abs(final_total) &&
                             hindsight_total <= identity_total + 1e-6 * std::abs(identity_total) &&
                             run.hindsight.params.norm() <= oc.bound + 1e-9;

  // Least-squares slope of log avg regret against log t for t >= 100.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto& [t, v] : avg) {
    if (t < 100 || v <= 0) continue;
    const double x = std::log(t), y = std::log(v);
    sx += x, sy += y, sxx += x * x, sxy += x * y;
    ++n;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double ratio = avg.at(2000) / avg.at(200);
  const double secs = since(t0);
  const bool ok = worst_excess <= 0.0 && ratio < 0.25 && slope <= -0.35 && comparator_ok &&
                  run.max_grad_norm <= run.lipschitz &&
                  base.store().hash() == frozen && run.skipped == 0 && secs < 600.0;
  results["5"] = {{"stream", stream.size()},
                  {"schedule", to_string(oc.schedule)},
                  {"lipschitz", run.lipschitz},
                  {"max_grad_norm", run.max_grad_norm},
                  {"bound_radius", oc.bound},
                  {"max_regret_minus_bound", worst_excess},
                  {"cum_regret_T", cum},
                  {"avg_regret_200", avg.at(200)},
                  {"avg_regret_2000", avg.at(2000)},
                  {"ratio", ratio},
                  {"decay_exponent", slope},
                  {"hindsight_converged", run.hindsight.converged},
                  {"comparator_ok", comparator_ok},
                  {"seconds", secs}};
  report(5, "no-regret online learner", ok,
         "max(R_t - B L sqrt(2t)) " + fmt(worst_excess, 4) + " (<= 0), avg regret t=2000 / t=200 " + fmt(ratio, 3) +
             " (< 0.25), decay exponent " + fmt(slope, 3) + " (<= -0.35), R_T " + fmt(cum, 5) + ", L " +
             fmt(run.lipschitz, 5) + " >= max observed gradient " + fmt(run.max_grad_norm, 4),
         secs);
}

// ---------------------------------------------------------------------------
// Criteria 6 to 8: directional comparisons on three training seeds.

struct SeedReports {
  std::map<TrainMode, MetricsReport> by_mode;
  bool mrmc_identical = true;  // every MRMC sample equals the first one, checked directly
};

void criterion_directional(const std::vector<SeedReports>& seeds) {
  const auto t0 = Clock::now();
  auto mean_of = [&](TrainMode m, auto field) {
    double s = 0;
    for (const auto& r : seeds) s += field(r.by_mode.at(m));
    return s / static_cast<double>(seeds.size());
  };
  auto f1 = [](const MetricsReport& r) { return r.scores.f1; };
  auto mean_msd = [](const MetricsReport& r) { return r.mean_msd.mean; };
  auto min_msd = [](const MetricsReport& r) { return r.min_msd.mean; };

  json per_seed = json::array();
  for (const auto& r : seeds) {
    json s = json::object();
    for (const auto& [mode, rep] : r.by_mode)
      s[to_string(mode)] = {{"h_p_qpi", rep.h_p_qpi},          {"h_p_qkappa", rep.h_p_qkappa},
                            {"min_msd", rep.min_msd.mean},     {"mean_msd", rep.mean_msd.mean},
                            {"precision", rep.scores.precision}, {"recall", rep.scores.recall},
                            {"f1", rep.scores.f1},             {"traj_cosim", rep.diversity.traj_cosim}};
    per_seed.push_back(s);
  }
  results["per_seed"] = per_seed;

  const double f1_joint = mean_of(TrainMode::joint, f1), f1_sep = mean_of(TrainMode::separate, f1);
  results["6"] = {{"f1_joint", f1_joint}, {"f1_separate", f1_sep}, {"difference", f1_joint - f1_sep}};
  report(6, "joint vs separate training, action F1", f1_joint - f1_sep >= 0.02,
         "mean F1 joint " + fmt(f1_joint) + " vs separate " + fmt(f1_sep) + ", difference " + fmt(f1_joint - f1_sep, 3) +
             " (>= 0.02, " + std::to_string(seeds.size()) + " seeds)",
         since(t0));

  const double mean_j = mean_of(TrainMode::joint, mean_msd), mean_f = mean_of(TrainMode::forward_only, mean_msd);
  const double min_j = mean_of(TrainMode::joint, min_msd), min_f = mean_of(TrainMode::forward_only, min_msd);
  const double reduction = 1.0 - mean_j / mean_f, degradation = min_j / min_f - 1.0;
  results["7"] = {{"mean_msd_joint", mean_j}, {"mean_msd_forward_only", mean_f}, {"min_msd_joint", min_j},
                  {"min_msd_forward_only", min_f}, {"mean_reduction", reduction}, {"min_degradation", degradation}};
  report(7, "reverse CE sharpens trajectories", reduction >= 0.25 && degradation <= 0.10,
         "meanMSD " + fmt(mean_f) + " -> " + fmt(mean_j) + " (reduction " + fmt(100 * reduction, 3) +
             "%, >= 25%), minMSD " + fmt(min_f) + " -> " + fmt(min_j) + " (change " + fmt(100 * degradation, 3) +
             "%, <= 10%)",
         since(t0));

  int fce_wins = 0, f1_wins = 0, mrmc_ok = 0, cosim_ok = 0;
  std::string text;
  for (const auto& r : seeds) {
    const auto& j = r.by_mode.at(TrainMode::joint);
    const auto& dce = r.by_mode.at(TrainMode::dce);
    const auto& mrmc = r.by_mode.at(TrainMode::mrmc);
    fce_wins += j.h_p_qpi < dce.h_p_qpi;
    f1_wins += j.scores.f1 > dce.scores.f1;
    mrmc_ok += r.mrmc_identical && mrmc.diversity.traj_cosim == 1.0;
    cosim_ok += j.diversity.traj_cosim < 0.9;
    text += "[H(p,q_pi) " + fmt(j.h_p_qpi) + " vs DCE " + fmt(dce.h_p_qpi) + ", F1 " + fmt(j.scores.f1) + " vs DCE " +
            fmt(dce.scores.f1) + ", CoSim joint " + fmt(j.diversity.traj_cosim, 3) + " MRMC " +
            fmt(mrmc.diversity.traj_cosim, 3) + "] ";
  }
  const int n = static_cast<int>(seeds.size());
  results["8"] = {{"fce_wins", fce_wins}, {"f1_wins", f1_wins}, {"mrmc_identical", mrmc_ok}, {"joint_cosim_below", cosim_ok},
                  {"seeds", n}};
  report(8, "full model vs DCE and MRMC", fce_wins == n && f1_wins == n && mrmc_ok == n && cosim_ok == n,
         "lower traj CE " + std::to_string(fce_wins) + "/" + std::to_string(n) + ", higher F1 " +
             std::to_string(f1_wins) + "/" + std::to_string(n) + ", MRMC CoSim = 1 " + std::to_string(mrmc_ok) + "/" +
             std::to_string(n) + ", joint CoSim < 0.9 " + std::to_string(cosim_ok) + "/" + std::to_string(n) + " " + text,
         since(t0));
}

// ---------------------------------------------------------------------------
// Criterion 9: online fine-tuning against the frozen model, both protocols.

void criterion_online_protocols(const Desk& d, Model& trained_on_train, Model& trained_on_test) {
  const auto t0 = Clock::now();
  OnlineConfig oc;
  oc.tau = d.loss.tau;
  oc.label_eps = d.loss.label_eps;
  oc.sigma_prior = d.loss.sigma_prior;
  const int classes = d.model.dims.action_classes;
  const StreamComparison a = compare_on_stream(build_online_examples(trained_on_train, d.test, oc), classes, oc);
  const StreamComparison b = compare_on_stream(build_online_examples(trained_on_test, d.train, oc), classes, oc);
  results["9"] = {{"train_to_test", {{"frozen", a.frozen.traj_forward}, {"online", a.online.traj_forward},
                                     {"frozen_act", a.frozen.act_forward}, {"online_act", a.online.act_forward}}},
                  {"test_to_train", {{"frozen", b.frozen.traj_forward}, {"online", b.online.traj_forward},
                                     {"frozen_act", b.frozen.act_forward}, {"online_act", b.online.act_forward}}}};
  const bool ok = a.online.traj_forward <= a.frozen.traj_forward && b.online.traj_forward <= b.frozen.traj_forward;
  report(9, "online fine-tuning vs frozen model", ok,
         "Train->Test H(p,q_pi) frozen " + fmt(a.frozen.traj_forward, 7) + " online " + fmt(a.online.traj_forward, 7) +
             "; Test->Train frozen " + fmt(b.frozen.traj_forward, 7) + " online " + fmt(b.online.traj_forward, 7),
         since(t0));
}

// ---------------------------------------------------------------------------
// Criterion 10: metric conventions on hand-computed cases.

void criterion_metrics() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };

  RowVector none = RowVector::Zero(4), truth(4), pred(4);
  truth << 1, 0, 1, 0;
  pred << 1, 1, 0, 0;
  PrF1 s = step_precision_recall(none, none);  // tp = fp = fn = 0
  check(s.precision, 1.0);
  check(s.recall, 1.0);
  s = step_precision_recall(none, truth);  // nothing predicted: precision 0/0 with fn > 0
  check(s.precision, 0.0);
  check(s.recall, 0.0);
  s = step_precision_recall(truth, none);  // nothing true: recall 0/0 with fp > 0
  check(s.precision, 0.0);
  check(s.recall, 0.0);
  s = step_precision_recall(pred, truth);  // tp 1, fp 1, fn 1
  check(s.precision, 0.5);
  check(s.recall, 0.5);

  Tensor p1(2, 4), t1(2, 4);
  p1 << 1, 1, 0, 0, 0, 0, 0, 0;
  t1 << 1, 0, 1, 0, 0, 0, 0, 0;
  Tensor p2(2, 4), t2(2, 4);
  p2 << 1, 0, 0, 0, 1, 1, 1, 0;
  t2 << 1, 1, 1, 1, 0, 0, 0, 1;
  const PrF1 ex = example_pr_f1({p1, p2}, {t1, t2});
  // Steps: (1/2, 1/2), (1, 1), (1, 1/4), (0, 0).
  const double prec = (0.5 + 1 + 1 + 0) / 4, rec = (0.5 + 1 + 0.25 + 0) / 4;
  check(ex.precision, prec);
  check(ex.recall, rec);
  check(ex.f1, 2 * prec * rec / (prec + rec));
  check(f1_score(0.3, 0.6), 2 * 0.3 * 0.6 / 0.9);
  check(f1_score(0.0, 0.0), 0.0);

  // Two samples at constant offsets 1 and 2 in x from the truth: squared errors 1 and 4
  // averaged over the three coordinates.
  Tensor truth_traj = Tensor::Zero(5, 3);
  for (int t = 0; t < 5; ++t) truth_traj.row(t) << 0.1 * t, -0.2 * t, 0.3;
  Tensor a = truth_traj, b = truth_traj;
  a.col(0).array() += 1.0;
  b.col(0).array() += 2.0;
  const MsdResult msd = min_mean_msd({a, b}, truth_traj);
  check(msd.min_msd, 1.0 / 3.0);
  check(msd.mean_msd, (1.0 + 4.0) / 2.0 / 3.0);

  Tensor occ = Tensor::Zero(5, 1);
  occ(2, 0) = 1.0;
  const Tensor prior = action_prior(occ, 0.5, 0.01);
  check(prior(1, 0), std::exp(-2.0));
  check(prior(3, 0), std::exp(-2.0));
  check(prior(2, 0), 1.0);

  results["10"] = {{"max_abs_error", worst}};
  report(10, "metric unit fidelity", worst <= 1e-12, "max deviation from hand values " + fmt(worst, 3) + " (<= 1e-12)",
         since(t0));
}

}  // namespace

int main() {
  const auto start = Clock::now();
  const Desk desk = make_desk();
  std::printf("desk data: %zu train / %zu validation / %zu test episodes\n", desk.train.size(), desk.validation.size(),
              desk.test.size());

  criterion_metrics();
  criterion_gumbel();
  criterion_flow(desk);
  criterion_gradients(desk);

  const std::vector<TrainMode> modes = {TrainMode::joint, TrainMode::separate, TrainMode::forward_only, TrainMode::dce,
                                        TrainMode::mrmc};
  std::vector<SeedReports> seeds;
  std::unique_ptr<Model> base;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    SeedReports sr;
    for (TrainMode mode : modes) {
      const auto t0 = Clock::now();
      auto model = train_model(desk, mode, seed, desk.train);
      sr.by_mode[mode] = evaluate_model(*model, desk.test, desk.loss, desk.eval);
      if (mode == TrainMode::mrmc) {
        for (const auto& f : sample_forecasts(*model, desk.test, desk.eval))
          for (const auto& tr : f.trajectories) sr.mrmc_identical = sr.mrmc_identical && tr == f.trajectories.front();
      }
      std::printf("  seed %llu %-12s F1 %.4f H(p,q_pi) %.3f minMSD %.5f meanMSD %.5f (%.0f s)\n",
                  static_cast<unsigned long long>(seed), to_string(mode).c_str(), sr.by_mode[mode].scores.f1,
                  sr.by_mode[mode].h_p_qpi, sr.by_mode[mode].min_msd.mean, sr.by_mode[mode].mean_msd.mean, since(t0));
      std::fflush(stdout);
      if (mode == TrainMode::joint && seed == 1) base = std::move(model);
    }
    seeds.push_back(std::move(sr));
  }

  OnlineConfig oc;
  oc.tau = desk.loss.tau;
  oc.label_eps = desk.loss.label_eps;
  oc.sigma_prior = desk.loss.sigma_prior;
  criterion_convexity(build_online_examples(*base, desk.test, oc), oc, desk.model.dims.action_classes);
  criterion_regret(desk, *base);
  criterion_directional(seeds);
  auto on_test = train_model(desk, TrainMode::joint, 1, desk.test);
  criterion_online_protocols(desk, *base, *on_test);

  std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  std::printf("\nsummary\n");
  int failed = 0;
  for (const auto& o : outcomes) {
    std::printf("[%s] criterion %d %s\n", o.passed ? "PASS" : "FAIL", o.id, o.title.c_str());
    failed += o.passed ? 0 : 1;
  }
  const double total = since(start);
  std::printf("total runtime %.0f s (target < 1800 s)\n", total);
  results["total_seconds"] = total;
  json list = json::array();
  for (const auto& o : outcomes)
    list.push_back({{"criterion", o.id}, {"title", o.title}, {"passed", o.passed}, {"detail", o.detail}, {"seconds", o.seconds}});
  results["criteria"] = list;
  std::ofstream("acceptance_results.json") << results.dump(2) << '\n';
  return failed == 0 ? 0 : 1;
}
