#include <doctest.h>

#include <cmath>

#include "hybridcast/online.hpp"
#include "hybridcast/trajectory.hpp"
#include "test_support.hpp"

using namespace hybridcast;
using testing_support::rel_err;

namespace {

struct Fixture {
  WorldConfig world = testing_support::small_world(31, 4);
  std::vector<Episode> episodes = generate_dataset(world, 30);
  std::unique_ptr<Model> model;
  OnlineConfig config;
  std::vector<OnlineExample> examples;
  int classes = world.dims.action_classes;

  Fixture() {
    model = Model::create(testing_support::small_model(world.dims), 5);
    model->fit_normalization(episodes);
    Rng rng(6);
    testing_support::jitter(*model, rng, 0.05);
    examples = build_online_examples(*model, episodes, config);
  }

  OnlineParams random_params(Rng& rng, double spread) const {
    OnlineParams p = OnlineParams::identity(classes, config.bound);
    Eigen::VectorXd v = p.flat();
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += spread * rng.normal();
    p.set_flat(v);
    return p;
  }
};

Eigen::Matrix3d mat(const Tensor& rows, Eigen::Index t) {
  Eigen::Matrix3d m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m(i, j) = rows(t, 3 * i + j);
  return m;
}

}  // namespace

TEST_CASE("flat layout round trips and the ball projection") {
  OnlineParams p = OnlineParams::identity(3, 10.0);
  CHECK(p.flat().size() == 9 + 6);
  Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(15, -1, 1);
  p.set_flat(v);
  CHECK(p.flat() == v);
  CHECK(p.theta_mu(0, 1) == v[1]);  // row-major
  CHECK(project_norm_ball(v, 10.0) == v);
  const Eigen::VectorXd far = 100.0 * Eigen::VectorXd::Ones(4);
  const Eigen::VectorXd proj = project_norm_ball(far, 2.0);
  CHECK(proj.norm() == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(proj[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("identity layer reproduces the frozen model's trajectory cross entropy") {
  const Fixture f;
  const OnlineParams id = OnlineParams::identity(f.classes, f.config.bound);
  for (std::size_t i = 0; i < 5; ++i) {
    NoGradScope off(f.model->store());
    const Batch b = make_batch(std::vector<Episode>{f.episodes[i]}, f.world.dims);
    const double frozen = forward_ce_traj(*f.model, b, b.future).item();
    CHECK(online_loss(id, f.examples[i], f.config).terms.traj_forward == doctest::Approx(frozen).epsilon(1e-10));
  }
}

TEST_CASE("trajectory gradient has the closed form sum (Sigma^-1 + I / sigma_p) r mu^T") {
  const Fixture f;
  Rng rng(1);
  for (int trial = 0; trial < 5; ++trial) {
    const OnlineParams p = f.random_params(rng, 0.3);
    const OnlineExample& ex = f.examples[static_cast<std::size_t>(trial)];
    Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
    for (Eigen::Index t = 0; t < ex.mu.rows(); ++t) {
      const Eigen::Vector3d mu = ex.mu.row(t).transpose();
      const Eigen::Vector3d r = p.theta_mu * mu + ex.prev.row(t).transpose() - ex.target.row(t).transpose();
      g += (mat(ex.sigma_inv, t) + Eigen::Matrix3d::Identity() / f.config.sigma_prior) * r * mu.transpose();
    }
    const Eigen::VectorXd lib = online_loss(p, ex, f.config).gradient;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) CHECK(rel_err(lib[3 * i + j], g(i, j)) < 1e-10);
  }
}

TEST_CASE("closed-form batch objective agrees with summed per-example losses") {
  const Fixture f;
  const std::vector<OnlineExample> few(f.examples.begin(), f.examples.begin() + 6);
  const OnlineBatchObjective obj(few, f.config);
  std::vector<const OnlineExample*> ptrs;
  for (const auto& e : few) ptrs.push_back(&e);
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const OnlineParams p = f.random_params(rng, 0.4);
    const auto v = obj.evaluate(p.flat(), true);
    const OnlineEvaluation ref = online_loss(p, ptrs, f.config);
    CHECK(v.loss == doctest::Approx(ref.terms.total).epsilon(1e-11));
    CHECK((v.gradient - ref.gradient).norm() <= 1e-9 * ref.gradient.norm());
    // Hessian against differences of the gradient.
    const Eigen::VectorXd x = p.flat();
    const double h = 1e-5;
    for (Eigen::Index k : {0, 4, 9, 20}) {
      Eigen::VectorXd xp = x, xm = x;
      xp[k] += h;
      xm[k] -= h;
      const Eigen::VectorXd col = (obj.evaluate(xp, false).gradient - obj.evaluate(xm, false).gradient) / (2 * h);
      CHECK((col - v.hessian.col(k)).norm() <= 1e-6 * std::max(1.0, v.hessian.col(k).norm()));
    }
  }
}

TEST_CASE("sampled reverse expectation is unbiased for the exact one") {
  const Fixture f;
  Rng rng(3);
  const OnlineParams p = f.random_params(rng, 0.2);
  OnlineConfig sampled = f.config;
  sampled.reverse_samples = 4;
  const double exact = online_loss(p, f.examples[0], f.config).terms.traj_reverse;
  double mean = 0.0;
  const int reps = 400;
  for (int i = 0; i < reps; ++i) mean += online_loss(p, f.examples[0], sampled, &rng).terms.traj_reverse / reps;
  CHECK(mean == doctest::Approx(exact).epsilon(0.01));
}

TEST_CASE("online steps: zero step size is a no-op, large steps stay in the ball") {
  const Fixture f;
  OnlineParams p = OnlineParams::identity(f.classes, 2.0 * std::sqrt(3.0 + 2.0 * f.classes));
  const Eigen::VectorXd before = p.flat();
  online_step(p, f.examples[0], 0.0, f.config);
  CHECK(p.flat() == before);
  p.bound = 1.0;
  online_step(p, f.examples[0], 1e6, f.config);
  CHECK(p.norm() <= 1.0 + 1e-12);
  CHECK_THROWS_AS(online_step(p, f.examples[0], -1.0, f.config), ContractViolation);
}

TEST_CASE("step size schedules") {
  OnlineConfig c;
  c.bound = 10.0;
  CHECK(step_size_at(c, 4.0, 200, 7) == doctest::Approx(10.0 / (4.0 * std::sqrt(400.0))));
  c.schedule = StepSchedule::anytime;
  CHECK(step_size_at(c, 4.0, 200, 1) == doctest::Approx(10.0 / (4.0 * std::sqrt(2.0))));
  CHECK(step_size_at(c, 4.0, 200, 9) == doctest::Approx(10.0 / (4.0 * std::sqrt(18.0))));
  c.step_size = 0.5;
  CHECK(step_size_at(c, 4.0, 200, 4) == doctest::Approx(0.25));
  c.schedule = StepSchedule::horizon;
  CHECK(step_size_at(c, 4.0, 200, 4) == 0.5);
  CHECK(step_schedule_from_string("anytime") == StepSchedule::anytime);
  CHECK_THROWS_AS(step_schedule_from_string("sometimes"), ContractViolation);
  CHECK_THROWS_AS(step_size_at(c, 4.0, 200, 0), ContractViolation);
}

TEST_CASE("hindsight optimum satisfies the projected optimality condition") {
  const Fixture f;
  for (std::size_t n : {std::size_t{1}, std::size_t{12}}) {
    const std::vector<OnlineExample> prefix(f.examples.begin(), f.examples.begin() + static_cast<long>(n));
    const OnlineParams start = OnlineParams::identity(f.classes, f.config.bound);
    const HindsightResult h = hindsight_optimum(prefix, start, f.config);
    CHECK(h.converged);
    CHECK(h.params.norm() <= f.config.bound + 1e-9);
    const OnlineBatchObjective obj(prefix, f.config);
    const Eigen::VectorXd x = h.params.flat();
    const Eigen::VectorXd g = obj.evaluate(x, false).gradient / static_cast<double>(n);
    CHECK((x - project_norm_ball(x - g, f.config.bound)).norm() < 1e-5);
    Rng rng(4);
    for (int i = 0; i < 20; ++i) {
      const Eigen::VectorXd y = project_norm_ball(f.random_params(rng, 1.0).flat(), f.config.bound);
      CHECK(obj.evaluate(y, false).loss >= h.loss - 1e-9 * std::abs(h.loss));
    }
  }
}

TEST_CASE("on a repeated example the average regret halves when the stream quadruples") {
  const Fixture f;
  auto avg_regret = [&](int T) {
    std::vector<OnlineExample> stream(static_cast<std::size_t>(T), f.examples[2]);
    const RegretRun run = regret_curve(stream, f.classes, f.config);
    return run.records.back().avg_regret;
  };
  const double a = avg_regret(100), b = avg_regret(400);
  INFO("R_T/T at T=100: " << a << ", at T=400: " << b);
  CHECK(b / a == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("the Lipschitz constant bounds every gradient inside the ball") {
  const Fixture f;
  const double lip = estimate_lipschitz(f.examples, 10, f.config);
  Rng rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 400; ++trial) {
    // Mostly far from the identity start, some on the boundary itself.
    Eigen::VectorXd v = f.config.bound * rng.normal_tensor(1, 9 + 2 * f.classes).transpose();
    v = project_norm_ball(v, trial % 2 == 0 ? f.config.bound : f.config.bound * rng.uniform(0.0, 1.0));
    OnlineParams p = OnlineParams::identity(f.classes, f.config.bound);
    p.set_flat(v);
    for (int i = 0; i < 10; ++i) worst = std::max(worst, online_loss(p, f.examples[static_cast<std::size_t>(i)], f.config).gradient.norm());
  }
  CHECK(worst <= lip);
  CHECK(worst >= 0.05 * lip);  // the bound is not vacuous
  // A gradient norm at the starting point alone would understate it.
  const OnlineParams start = OnlineParams::identity(f.classes, f.config.bound);
  CHECK(online_loss(start, f.examples[0], f.config).gradient.norm() < lip);
}

TEST_CASE("regret curve stays under its bound and leaves the frozen model untouched") {
  const Fixture f;
  const std::uint64_t before = f.model->store().hash();
  OnlineConfig c = f.config;
  c.schedule = StepSchedule::anytime;
  c.warmup = 10;
  const RegretRun run = regret_curve(f.examples, f.classes, c);
  CHECK(run.skipped == 0);
  CHECK(run.records.size() == f.examples.size());
  double cum = 0.0;
  for (std::size_t i = 0; i < run.records.size(); ++i) {
    const auto& r = run.records[i];
    cum += run.online_terms[i].total - online_loss(run.hindsight.params, f.examples[i], c).terms.total;
    CHECK(r.cum_regret == doctest::Approx(cum).epsilon(1e-9));
    CHECK(r.cum_regret <= r.bound);
    CHECK(r.bound == doctest::Approx(c.bound * run.lipschitz * std::sqrt(2.0 * r.t)));
  }
  CHECK(f.model->store().hash() == before);
}

TEST_CASE("decay exponent of a power law") {
  std::vector<RegretRecord> recs;
  for (int t = 1; t <= 500; ++t) {
    RegretRecord r;
    r.t = t;
    r.avg_regret = 3.0 * std::pow(t, -0.5);
    recs.push_back(r);
  }
  CHECK(regret_decay_exponent(recs, 10) == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK_THROWS_AS(regret_decay_exponent(recs, 1000), ContractViolation);
}

TEST_CASE("convexity checks pass for all three online losses") {
  const Fixture f;
  const std::vector<OnlineExample> few(f.examples.begin(), f.examples.begin() + 6);
  for (ConvexityLoss kind : {ConvexityLoss::traj_fce, ConvexityLoss::traj_rce_adj, ConvexityLoss::act_fce}) {
    const ConvexityReport r = verify_convexity(kind, few, 200, 7);
    INFO(r.to_json().dump());
    CHECK(r.passed);
  }
  // Closed-form Hessian: mu mu^T (x) Sigma^-1 in column-major vec ordering.
  const Eigen::MatrixXd h = traj_fce_hessian(f.examples[0]);
  Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(9, 9);
  for (Eigen::Index t = 0; t < f.examples[0].mu.rows(); ++t) {
    const Eigen::Vector3d mu = f.examples[0].mu.row(t).transpose();
    const Eigen::Matrix3d mm = mu * mu.transpose(), prec = mat(f.examples[0].sigma_inv, t);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) expect.block(3 * a, 3 * b, 3, 3) += mm(a, b) * prec;
  }
  CHECK((h - expect).cwiseAbs().maxCoeff() <= 1e-9 * expect.cwiseAbs().maxCoeff());
}

TEST_CASE("configuration round trip and validation") {
  OnlineConfig c;
  c.schedule = StepSchedule::anytime;
  c.objective = OnlineObjective::as_printed;
  c.bound = 3.0;
  const OnlineConfig back = OnlineConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(online_objective_from_string("as-printed") == OnlineObjective::as_printed);
  c.tau = 0.0;
  CHECK_THROWS_AS(c.validate(), ContractViolation);
}

TEST_CASE("the as-printed objective counts the trajectory forward CE twice") {
  const Fixture f;
  Rng rng(8);
  const OnlineParams p = f.random_params(rng, 0.2);
  OnlineConfig printed = f.config;
  printed.objective = OnlineObjective::as_printed;
  const OnlineTerms t = online_loss(p, f.examples[0], f.config).terms;
  CHECK(online_loss(p, f.examples[0], f.config).terms.total ==
        doctest::Approx(t.traj_forward + t.traj_reverse + t.act_forward).epsilon(1e-12));
  CHECK(online_loss(p, f.examples[0], printed).terms.total ==
        doctest::Approx(2 * t.traj_forward + t.traj_reverse).epsilon(1e-12));
}
